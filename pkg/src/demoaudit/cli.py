"""Batch CLI: annotate, aggregate, evaluate, diversity, import-dump.

Subcommands read a plain-text config plus flag overrides, write static
CSV/Markdown reports, and print one JSON summary line to stdout. Exit code
0 means no fatal error; fatal errors print a machine-readable JSON object
to stderr and exit 2. Per-image failures are logged to stderr and counted,
never fatal.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from .aggregate import AggregateState, synset_gender_ranking, top_level_table
from .annotator import Annotator, StubAnnotator
from .config import AuditConfig, build_config, config_hash, parse_config_file
from .dataset import (
    Hierarchy,
    ImageRecord,
    load_hierarchy_files,
    load_manifest,
    load_wnid_list,
    subtree,
)
from .diversity import DEFAULT_DIMS, diversity_score
from .errors import (
    AnnotationFailure,
    AuditError,
    ConfigError,
    NoDecodableImages,
    UnknownWnidError,
    ValidationError,
)
from .evaluate import (
    load_age_predictions,
    load_detection_predictions,
    load_eval_samples,
    load_gender_predictions,
    stratified_accuracy,
    stratified_ap,
    stratified_mae,
)
from .reports import (
    COUNTING_NOTE,
    markdown_header,
    provenance_lines,
    ranking_rows,
    stratified_rows,
    top_level_rows,
    write_csv,
    write_markdown_table,
)
from .store import (
    ShardWriter,
    import_dump,
    load as load_shard,
    read_field_mapping,
    record_from_annotation,
    repair_shard,
)
from .worker_client import WorkerAnnotator


def _emit(obj: dict) -> None:
    print(json.dumps(obj, ensure_ascii=False, sort_keys=True))


def _sha12(text: str) -> str:
    import hashlib

    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def _fail(exc: AuditError) -> int:
    print(
        json.dumps({"error": type(exc).__name__, "code": exc.code, "message": str(exc)}),
        file=sys.stderr,
    )
    return 2


# --- shared loading ----------------------------------------------------------


def _load_config(args: argparse.Namespace) -> AuditConfig:
    file_values = parse_config_file(args.config) if getattr(args, "config", None) else {}
    overrides: dict[str, object] = {}
    for attr in ("manifest", "min_conf", "out", "shards", "seed"):
        if hasattr(args, attr):
            overrides[attr] = getattr(args, attr)
    subset = getattr(args, "subset", None)
    if subset:
        # the flag replaces whichever subset form the config file chose
        file_values.pop("subset.root", None)
        file_values.pop("subset.list", None)
        if subset.startswith("@"):
            overrides["subset_list"] = subset[1:]
        else:
            overrides["subset_root"] = subset
    return build_config(file_values, overrides)


def _load_hierarchy(cfg: AuditConfig) -> Hierarchy | None:
    if cfg.hierarchy_edges and cfg.hierarchy_glosses:
        return load_hierarchy_files(cfg.hierarchy_edges, cfg.hierarchy_glosses)
    return None


def _load_audit_inputs(cfg: AuditConfig):
    if not cfg.manifest:
        raise ConfigError("a manifest path is required (flag --manifest or config key manifest)")
    hierarchy = _load_hierarchy(cfg)
    manifest, report = load_manifest(cfg.manifest, hierarchy)
    if cfg.subset_root or cfg.subset_list:
        if cfg.subset_root:
            if hierarchy is None:
                raise ConfigError("subset.root needs hierarchy.edges and hierarchy.glosses")
            wnids = subtree(hierarchy, cfg.subset_root).wnids
        else:
            wnids = tuple(load_wnid_list(cfg.subset_list))
            if hierarchy is not None:
                for wnid in wnids:
                    if wnid not in hierarchy:
                        raise UnknownWnidError(f"subset wnid {wnid!r} not in hierarchy")
        manifest = manifest.restrict(wnids)
    return hierarchy, manifest, report


# --- annotate ----------------------------------------------------------------


def _make_annotator_factory(cfg: AuditConfig) -> Callable[[], Annotator]:
    if cfg.annotator == "stub":
        return lambda: StubAnnotator(seed=cfg.seed)
    return lambda: WorkerAnnotator(cfg.annotator, min_conf=cfg.min_conf)


def _resolve_uri(uri: str, base: Path) -> str:
    if "://" in uri:
        return uri
    path = Path(uri)
    return str(path if path.is_absolute() else (base / path).resolve())


def _process_shard(
    images: Sequence[ImageRecord],
    shard_path: Path,
    make_annotator: Callable[[], Annotator],
    min_conf: float,
    clock: Callable[[], float],
) -> dict[str, int]:
    """Annotate one manifest slice into one shard file, resume-aware.

    Resume skips every slice image before the last committed record's image,
    then re-annotates that boundary image: if all of its records are already
    present it counts as skipped, otherwise only the missing lines are
    appended. Duplicate (image_id, box) lines are never written.
    """
    repair_shard(shard_path)
    existing = []
    if shard_path.exists():
        existing, _ = load_shard(shard_path, dedup=False)
    keys = {rec.dedup_key for rec in existing}
    last_image_id = existing[-1].image_id if existing else None
    positions = {img.image_id: i for i, img in enumerate(images)}
    last_pos = positions.get(last_image_id, -1) if last_image_id else -1

    annotator = make_annotator()
    processed = skipped = failed = 0
    try:
        with ShardWriter(shard_path) as writer:
            for pos, image in enumerate(images):
                if pos < last_pos:
                    skipped += 1
                    continue
                try:
                    annotations = annotator.annotate(image)
                except AnnotationFailure as exc:
                    print(f"[annotate] {image.image_id}: {exc}", file=sys.stderr)
                    failed += 1
                    continue
                gated = [a for a in annotations if a.detection.confidence >= min_conf]
                new = []
                for ann in gated:
                    rec = record_from_annotation(ann, image, clock())
                    if rec.dedup_key not in keys:
                        new.append(rec)
                if pos == last_pos and not new:
                    skipped += 1
                    continue
                for rec in new:
                    writer.append(rec)
                    keys.add(rec.dedup_key)
                processed += 1
    finally:
        annotator.close()
    return {"processed": processed, "skipped": skipped, "failed": failed}


def cmd_annotate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    _, manifest, load_report = _load_audit_inputs(cfg)
    base = Path(cfg.manifest).parent
    images = [
        ImageRecord(r.image_id, r.synset_wnid, _resolve_uri(r.uri, base), r.status)
        for r in manifest.records
    ]

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    factory = _make_annotator_factory(cfg)
    clock: Callable[[], float] = (lambda: 0.0) if cfg.annotator == "stub" else time.time

    shard_paths = [out_dir / f"shard-{k:04d}.jsonl" for k in range(cfg.shards)]
    slices = [images[k :: cfg.shards] for k in range(cfg.shards)]
    totals = {"processed": 0, "skipped": 0, "failed": 0}
    with ThreadPoolExecutor(max_workers=cfg.shards) as pool:
        futures = [
            pool.submit(_process_shard, shard_slice, shard_path, factory, cfg.min_conf, clock)
            for shard_slice, shard_path in zip(slices, shard_paths)
        ]
        for future in futures:
            counts = future.result()
            for key in totals:
                totals[key] += counts[key]

    _emit(
        {
            "command": "annotate",
            "config": config_hash(cfg),
            "images": len(images),
            "manifest_missing": load_report.missing,
            "processed": totals["processed"],
            "skipped": totals["skipped"],
            "failed": totals["failed"],
            "shards": [str(p) for p in shard_paths],
        }
    )
    return 0


# --- aggregate ---------------------------------------------------------------


def _load_shard_annotations(
    shard_paths: Sequence[Path], min_conf: float
) -> tuple[list, list[str]]:
    """Records from all shards (global first-write-wins dedup), gate applied."""
    records = []
    versions: list[str] = []
    seen = set()
    for path in shard_paths:
        recs, _ = load_shard(path, dedup=False)
        for rec in recs:
            if rec.dedup_key in seen:
                continue
            seen.add(rec.dedup_key)
            if rec.confidence >= min_conf:
                records.append(rec)
                versions.append(rec.annotator_version)
    return records, versions


def _expand_shard_args(paths: Sequence[str]) -> list[Path]:
    shard_paths: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            shard_paths.extend(sorted(p.glob("*.jsonl")))
        else:
            shard_paths.append(p)
    if not shard_paths:
        raise ConfigError("no shard files found")
    return shard_paths


def cmd_aggregate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    hierarchy, manifest, _ = _load_audit_inputs(cfg)
    shard_paths = _expand_shard_args(args.shard_paths)
    records, versions = _load_shard_annotations(shard_paths, cfg.min_conf)

    state = AggregateState()
    for rec in records:
        image = manifest.by_id.get(rec.image_id)
        if image is None:
            raise ValidationError(f"annotation references image {rec.image_id!r} absent from manifest")
        if image.synset_wnid != rec.synset_wnid:
            raise ValidationError(
                f"annotation synset {rec.synset_wnid!r} disagrees with manifest "
                f"({image.synset_wnid!r}) for image {rec.image_id!r}"
            )
        state.accumulate(rec.to_annotation(), image, manifest)

    table = top_level_table(state)
    male_ranked, female_ranked = synset_gender_ranking(
        state,
        manifest,
        hierarchy,
        min_images=cfg.min_images,
        min_det_rate=cfg.min_det_rate,
    )
    if args.top is not None:
        male_ranked = male_ranked[: args.top]
        female_ranked = female_ranked[: args.top]

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    comments = provenance_lines(__version__, config_hash(cfg), versions)
    footers = [COUNTING_NOTE, "percentages are over gated faces, not images"]

    header, rows = top_level_rows(table)
    write_csv(out_dir / "top_level.csv", header, rows, comments, footers)
    write_markdown_table(
        out_dir / "top_level.md", markdown_header(header), rows, comments, footers,
        title="Share of gated faces by age group and gender (%)",
    )
    outputs = ["top_level.csv", "top_level.md"]
    for name, ranked in (("male", male_ranked), ("female", female_ranked)):
        header, rows = ranking_rows(ranked)
        write_csv(out_dir / f"ranking_{name}.csv", header, rows, comments, footers)
        write_markdown_table(
            out_dir / f"ranking_{name}.md", markdown_header(header), rows, comments, footers,
            title=f"Synsets ranked by share of faces labeled {name} (%)",
        )
        outputs += [f"ranking_{name}.csv", f"ranking_{name}.md"]

    _emit(
        {
            "command": "aggregate",
            "config": config_hash(cfg),
            "faces": table.total_faces,
            "synsets_ranked": len(male_ranked),
            "outputs": [str(out_dir / name) for name in outputs],
        }
    )
    return 0


# --- evaluate ----------------------------------------------------------------


def cmd_evaluate(args: argparse.Namespace) -> int:
    samples = load_eval_samples(args.labels)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest_src = json.dumps(
        {
            "labels": args.labels,
            "pred_detect": args.pred_detect,
            "pred_age": args.pred_age,
            "pred_gender": args.pred_gender,
            "strata": args.strata,
            "iou": args.iou,
        },
        sort_keys=True,
    )
    comments = provenance_lines(__version__, _sha12(digest_src), [])
    strata = [s.strip() for s in args.strata.split(",") if s.strip()]
    for s in strata:
        if s not in ("age", "skin"):
            raise ConfigError(f"--strata entries must be 'age' or 'skin', got {s!r}")

    outputs: list[str] = []

    if args.pred_detect:
        dets = load_detection_predictions(args.pred_detect)
        table = stratified_ap(dets, samples, iou_threshold=args.iou)
        header, rows = stratified_rows(table, "age_group")
        write_csv(out_dir / "detection_ap.csv", header, rows, comments)
        outputs.append("detection_ap.csv")

    if args.pred_age:
        preds = load_age_predictions(args.pred_age)
        table = stratified_mae(preds, samples)
        header, rows = stratified_rows(table, "age_group")
        write_csv(out_dir / "age_mae.csv", header, rows, comments)
        outputs.append("age_mae.csv")

    if args.pred_gender:
        preds = load_gender_predictions(args.pred_gender)
        for s in strata:
            table = stratified_accuracy(preds, samples, strata=s)
            row_title = "age_group" if s == "age" else "skin_type"
            header, rows = stratified_rows(table, row_title)
            name = f"gender_accuracy_{s}.csv"
            write_csv(out_dir / name, header, rows, comments)
            outputs.append(name)

    if not outputs:
        raise ConfigError("nothing to evaluate: pass --pred-detect, --pred-age or --pred-gender")

    _emit(
        {
            "command": "evaluate",
            "samples": len(samples),
            "outputs": [str(out_dir / name) for name in outputs],
        }
    )
    return 0


# --- diversity ---------------------------------------------------------------


def cmd_diversity(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    _, manifest, _ = _load_audit_inputs(cfg)
    base = Path(cfg.manifest).parent
    try:
        width, height = (int(v) for v in args.dims.split("x"))
    except ValueError as exc:
        raise ConfigError(f"--dims must look like 256x256, got {args.dims!r}") from exc

    by_synset: dict[str, list[str]] = {}
    for rec in manifest.records:
        by_synset.setdefault(rec.synset_wnid, []).append(_resolve_uri(rec.uri, base))

    rows = []
    skipped = 0
    for wnid in sorted(by_synset):
        try:
            score = diversity_score(wnid, by_synset[wnid], target_dims=(width, height))
        except NoDecodableImages as exc:
            print(f"[diversity] {exc}", file=sys.stderr)
            skipped += 1
            continue
        rows.append([score.wnid, str(score.n_images), str(score.compressed_bytes), score.codec_id])

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    comments = provenance_lines(__version__, config_hash(cfg), [])
    footers = [f"synsets with no decodable images: {skipped}"]
    write_csv(
        out_dir / "diversity.csv",
        ["wnid", "n_images", "compressed_bytes", "codec_id"],
        rows,
        comments,
        footers,
    )
    _emit(
        {
            "command": "diversity",
            "config": config_hash(cfg),
            "synsets": len(rows),
            "skipped_synsets": skipped,
            "outputs": [str(out_dir / "diversity.csv")],
        }
    )
    return 0


# --- import-dump -------------------------------------------------------------


def cmd_import_dump(args: argparse.Namespace) -> int:
    mapping = read_field_mapping(args.mapping)
    report = import_dump(args.dump, mapping, args.out_shard)
    _emit(
        {
            "command": "import-dump",
            "loaded": report.loaded,
            "skipped_invalid": report.skipped_invalid,
            "duplicates": report.duplicates,
            "outputs": [str(args.out_shard)],
        }
    )
    return 0


# --- parser ------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="plain-text key-value config file")
    parser.add_argument("--manifest", help="image manifest (image_id<TAB>wnid<TAB>uri)")
    parser.add_argument("--subset", help="root wnid, or @FILE with one wnid per line")
    parser.add_argument("--min-conf", dest="min_conf", type=float, help="detection gate (default 0.9)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, help="stub annotator seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="audit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"demoaudit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("annotate", help="run the annotator over a manifest into shard files")
    _add_common(p)
    p.add_argument("--shards", type=int, help="number of shard files / workers (default 1)")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("aggregate", help="aggregate shards into tables and rankings")
    _add_common(p)
    p.add_argument("shard_paths", nargs="+", help="shard files or directories of *.jsonl")
    p.add_argument("--top", type=int, help="keep only the top N ranking rows")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("evaluate", help="score predictions against a labeled benchmark")
    p.add_argument("--labels", required=True, help="EvalSample .jsonl file")
    p.add_argument("--pred-detect", help="detection predictions .jsonl")
    p.add_argument("--pred-age", help="age predictions .jsonl")
    p.add_argument("--pred-gender", help="gender predictions .jsonl")
    p.add_argument("--strata", default="age", help="comma list of strata: age,skin (default age)")
    p.add_argument("--iou", type=float, default=0.5, help="IoU threshold for matching")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("diversity", help="average-image compressed-size score per synset")
    _add_common(p)
    p.add_argument("--dims", default=f"{DEFAULT_DIMS[0]}x{DEFAULT_DIMS[1]}", help="WxH resize target")
    p.set_defaults(func=cmd_diversity)

    p = sub.add_parser("import-dump", help="convert an external annotation dump to a shard")
    p.add_argument("--mapping", required=True, help="field mapping file (ours = theirs)")
    p.add_argument("--dump", required=True, help="external .jsonl dump")
    p.add_argument("--out-shard", required=True, help="destination shard path")
    p.set_defaults(func=cmd_import_dump)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AuditError as exc:
        return _fail(exc)
    except FileNotFoundError as exc:
        return _fail(ConfigError(f"file not found: {exc.filename}"))


if __name__ == "__main__":
    sys.exit(main())
