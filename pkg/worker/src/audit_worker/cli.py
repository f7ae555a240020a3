"""audit-worker CLI: `serve` a protocol loop or `batch`-annotate a manifest."""

from __future__ import annotations

import argparse
import functools
import json
import sys
from typing import Sequence

from .backends import BackendUnavailable, StubServeBackend, TorchscriptBackend
from .batch import DEFAULT_MIN_CONF, batch_annotate, model_image_lines, stub_image_lines
from .preprocess import DEFAULT_INPUT_SIZE, DEFAULT_MARGIN
from .serve import serve_stdio, serve_tcp


def _add_model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--stub", action="store_true", help="weightless deterministic mode")
    parser.add_argument("--detector", help="TorchScript face detector path")
    parser.add_argument("--age-model", help="TorchScript age model path")
    parser.add_argument("--gender-model", help="TorchScript gender model path")
    parser.add_argument("--margin", type=float, default=DEFAULT_MARGIN, help="crop margin per side")
    parser.add_argument(
        "--input-size", type=int, default=DEFAULT_INPUT_SIZE, help="model input resize"
    )


def _build_backend(args: argparse.Namespace):
    if args.stub:
        return StubServeBackend()
    if not (args.detector and args.age_model and args.gender_model):
        raise BackendUnavailable(
            "need --detector, --age-model and --gender-model (or --stub)"
        )
    return TorchscriptBackend(
        args.detector,
        args.age_model,
        args.gender_model,
        margin=args.margin,
        input_size=args.input_size,
    )


def cmd_serve(args: argparse.Namespace) -> int:
    backend = _build_backend(args)
    if args.listen:
        host, _, port = args.listen.rpartition(":")
        return serve_tcp(backend, host or "127.0.0.1", int(port))
    return serve_stdio(backend)


def cmd_batch(args: argparse.Namespace) -> int:
    if args.stub:
        line_fn = functools.partial(stub_image_lines, seed=args.seed, min_conf=args.min_conf)
    else:
        backend = _build_backend(args)
        line_fn = functools.partial(model_image_lines, backend=backend, min_conf=args.min_conf)
    summary = batch_annotate(args.manifest, args.out, line_fn)
    print(
        json.dumps(
            {
                "command": "batch",
                "attempted": summary.attempted,
                "annotated": summary.annotated,
                "failed": summary.failed,
                "faces": summary.faces,
                "out": str(args.out),
            },
            sort_keys=True,
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="audit-worker", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="line-delimited JSON loop over stdio or TCP")
    _add_model_flags(p)
    p.add_argument("--listen", help="HOST:PORT for TCP mode (default: stdio)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("batch", help="annotate a manifest straight into a shard file")
    _add_model_flags(p)
    p.add_argument("--manifest", required=True, help="image_id<TAB>wnid<TAB>uri file")
    p.add_argument("--out", required=True, help="shard output path")
    p.add_argument("--seed", type=int, default=0, help="stub seed")
    p.add_argument("--min-conf", type=float, default=DEFAULT_MIN_CONF, help="detection gate")
    p.set_defaults(func=cmd_batch)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BackendUnavailable as exc:
        print(json.dumps({"error": "BackendUnavailable", "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
