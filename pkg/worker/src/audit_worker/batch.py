"""File-batch mode: read a manifest, write an annotation shard directly.

The shard is the same line format the pipeline's own store writes: one JSON
object per line with a fixed key order and all floats at 6 decimals, so
stub-mode output is bit-compatible with the pipeline's stub shards.
Per-image failures are logged to stderr and counted, never fatal.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .backends import Backend
from .protocol import RequestError
from .stub import batch_faces, stub_version

DEFAULT_MIN_CONF = 0.9


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    synset_wnid: str
    uri: str


@dataclass
class BatchSummary:
    attempted: int = 0
    annotated: int = 0
    failed: int = 0
    faces: int = 0


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """`image_id<TAB>wnid<TAB>uri` lines; blank lines skipped."""
    entries: list[ManifestEntry] = []
    base = Path(path).parent
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"manifest line {lineno}: expected 3 tab-separated fields")
            image_id, wnid, uri = (p.strip() for p in parts)
            if "://" not in uri and not Path(uri).is_absolute():
                uri = str((base / uri).resolve())
            entries.append(ManifestEntry(image_id, wnid, uri))
    return entries


def record_line(
    image_id: str,
    wnid: str,
    box: dict,
    confidence: float,
    expected_age: float,
    gender_score: float,
    version: str,
    timestamp: float,
) -> str:
    return (
        '{"image_id": %s, "synset_wnid": %s, '
        '"box": {"x": %.6f, "y": %.6f, "w": %.6f, "h": %.6f}, '
        '"confidence": %.6f, "expected_age": %.6f, "gender_score": %.6f, '
        '"annotator_version": %s, "timestamp": %.6f}'
        % (
            json.dumps(image_id, ensure_ascii=False),
            json.dumps(wnid, ensure_ascii=False),
            box["x"],
            box["y"],
            box["w"],
            box["h"],
            confidence,
            expected_age,
            gender_score,
            json.dumps(version, ensure_ascii=False),
            timestamp,
        )
    )


def _expected_age_from_posterior(posterior: Sequence[float]) -> float:
    if len(posterior) != 101 or any(p < 0 for p in posterior):
        raise RequestError("bad_posterior", "posterior must be 101 nonnegative floats")
    return sum(i * p for i, p in enumerate(posterior))


def stub_image_lines(entry: ManifestEntry, seed: int, min_conf: float) -> list[str]:
    version = stub_version(seed)
    lines = []
    for face in batch_faces(entry.image_id, seed):
        if face["conf"] < min_conf:
            continue
        lines.append(
            record_line(
                entry.image_id,
                entry.synset_wnid,
                {k: face[k] for k in ("x", "y", "w", "h")},
                face["conf"],
                face["age"],
                face["score"],
                version,
                0.0,
            )
        )
    return lines


def model_image_lines(
    entry: ManifestEntry,
    backend: Backend,
    min_conf: float,
    clock: Callable[[], float] = time.time,
) -> list[str]:
    lines = []
    for box in backend.detect(entry.image_id, entry.uri):
        if box["conf"] < min_conf:
            continue
        crop_box = {k: box[k] for k in ("x", "y", "w", "h")}
        posterior = backend.age(entry.image_id, entry.uri, crop_box)
        score = backend.gender(entry.image_id, entry.uri, crop_box)
        lines.append(
            record_line(
                entry.image_id,
                entry.synset_wnid,
                crop_box,
                box["conf"],
                _expected_age_from_posterior(posterior),
                min(1.0, max(0.0, score)),
                backend.version,
                clock(),
            )
        )
    return lines


def batch_annotate(
    manifest_path: str | Path,
    out_path: str | Path,
    line_fn: Callable[[ManifestEntry], list[str]],
) -> BatchSummary:
    """Annotate every manifest entry once, in manifest order."""
    entries = read_manifest(manifest_path)
    summary = BatchSummary()
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for entry in entries:
            summary.attempted += 1
            try:
                lines = line_fn(entry)
            except Exception as exc:  # per-image isolation
                print(f"[batch] {entry.image_id}: {type(exc).__name__}: {exc}", file=sys.stderr)
                summary.failed += 1
                continue
            for line in lines:
                fh.write(line + "\n")
            summary.annotated += 1
            summary.faces += len(lines)
    return summary
