"""Append-only JSONL persistence for annotations.

One JSON object per line, fixed key order, floats at 6 decimals: identical
records always serialize to identical bytes, so shards double as golden
files. A line is the durability unit; loads keep every complete valid line
and count everything else. Dedup is first-write-wins on (image_id, box).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

from .annotator import Box, FaceAnnotation, FaceDetection, make_annotation
from .dataset import ImageRecord
from .errors import ParseError, ValidationError

__all__ = [
    "AnnotationRecord",
    "LoadReport",
    "StoreCheckpoint",
    "ShardWriter",
    "record_line",
    "parse_record",
    "record_from_annotation",
    "load",
    "resume_point",
    "repair_shard",
    "merge_shards",
    "read_field_mapping",
    "import_dump",
]

_FIELDS = (
    "image_id",
    "synset_wnid",
    "box",
    "confidence",
    "expected_age",
    "gender_score",
    "annotator_version",
    "timestamp",
)


@dataclass(frozen=True)
class AnnotationRecord:
    image_id: str
    synset_wnid: str
    box: Box
    confidence: float
    expected_age: float
    gender_score: float
    annotator_version: str
    timestamp: float

    @property
    def dedup_key(self) -> tuple[str, str]:
        b = self.box
        return (self.image_id, f"{b.x:.6f},{b.y:.6f},{b.w:.6f},{b.h:.6f}")

    def to_annotation(self) -> FaceAnnotation:
        return make_annotation(
            FaceDetection(image_id=self.image_id, box=self.box, confidence=self.confidence),
            expected_age_years=self.expected_age,
            gender_score=self.gender_score,
            annotator_version=self.annotator_version,
        )


@dataclass(frozen=True)
class LoadReport:
    total_lines: int
    loaded: int
    skipped_partial: int
    skipped_invalid: int
    duplicates: int


@dataclass(frozen=True)
class StoreCheckpoint:
    shard_path: str
    records_committed: int
    last_image_id: str | None


def record_from_annotation(
    ann: FaceAnnotation, image: ImageRecord, timestamp: float
) -> AnnotationRecord:
    return AnnotationRecord(
        image_id=ann.detection.image_id,
        synset_wnid=image.synset_wnid,
        box=ann.detection.box,
        confidence=ann.detection.confidence,
        expected_age=ann.expected_age,
        gender_score=ann.gender_score,
        annotator_version=ann.annotator_version,
        timestamp=timestamp,
    )


def record_line(rec: AnnotationRecord) -> str:
    """Canonical one-line serialization (no trailing newline)."""
    b = rec.box
    return (
        '{"image_id": %s, "synset_wnid": %s, '
        '"box": {"x": %.6f, "y": %.6f, "w": %.6f, "h": %.6f}, '
        '"confidence": %.6f, "expected_age": %.6f, "gender_score": %.6f, '
        '"annotator_version": %s, "timestamp": %.6f}'
        % (
            json.dumps(rec.image_id, ensure_ascii=False),
            json.dumps(rec.synset_wnid, ensure_ascii=False),
            b.x,
            b.y,
            b.w,
            b.h,
            rec.confidence,
            rec.expected_age,
            rec.gender_score,
            json.dumps(rec.annotator_version, ensure_ascii=False),
            rec.timestamp,
        )
    )


def parse_record(obj: dict) -> AnnotationRecord:
    try:
        box = obj["box"]
        rec = AnnotationRecord(
            image_id=str(obj["image_id"]),
            synset_wnid=str(obj["synset_wnid"]),
            box=Box(float(box["x"]), float(box["y"]), float(box["w"]), float(box["h"])),
            confidence=float(obj["confidence"]),
            expected_age=float(obj["expected_age"]),
            gender_score=float(obj["gender_score"]),
            annotator_version=str(obj["annotator_version"]),
            timestamp=float(obj["timestamp"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad annotation record: {exc}") from exc
    if not 0.0 <= rec.confidence <= 1.0:
        raise ValidationError(f"confidence {rec.confidence} outside [0, 1]")
    if not 0.0 <= rec.expected_age <= 100.0:
        raise ValidationError(f"expected_age {rec.expected_age} outside [0, 100]")
    if not 0.0 <= rec.gender_score <= 1.0:
        raise ValidationError(f"gender_score {rec.gender_score} outside [0, 1]")
    return rec


class ShardWriter:
    """Single-owner appender; each ack means the full line reached disk."""

    def __init__(self, path: str | Path, durable: bool = True):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "ab")
        self._durable = durable

    def append(self, rec: AnnotationRecord) -> None:
        data = (record_line(rec) + "\n").encode("utf-8")
        self._fh.write(data)
        self._fh.flush()
        if self._durable:
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            if self._durable:
                os.fsync(self._fh.fileno())
            self._fh.close()

    def __enter__(self) -> "ShardWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _complete_lines(path: str | Path) -> Iterator[tuple[int, str]]:
    """Yield (lineno, line) for newline-terminated lines; a truncated tail is dropped."""
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.rfind(b"\n")
    complete = data[: end + 1] if end >= 0 else b""
    for lineno, raw in enumerate(complete.split(b"\n")[:-1], start=1):
        yield lineno, raw.decode("utf-8")


def load(path: str | Path, dedup: bool = False) -> tuple[list[AnnotationRecord], LoadReport]:
    """All complete valid records in file order; optionally first-write-wins dedup."""
    with open(path, "rb") as fh:
        raw = fh.read()
    has_partial_tail = len(raw) > 0 and not raw.endswith(b"\n")

    records: list[AnnotationRecord] = []
    seen: set[tuple[str, str]] = set()
    total = invalid = duplicates = 0
    for _, line in _complete_lines(path):
        if not line.strip():
            continue
        total += 1
        try:
            rec = parse_record(json.loads(line))
        except (json.JSONDecodeError, ValidationError):
            invalid += 1
            continue
        if dedup:
            if rec.dedup_key in seen:
                duplicates += 1
                continue
            seen.add(rec.dedup_key)
        records.append(rec)

    report = LoadReport(
        total_lines=total + (1 if has_partial_tail else 0),
        loaded=len(records),
        skipped_partial=1 if has_partial_tail else 0,
        skipped_invalid=invalid,
        duplicates=duplicates,
    )
    return records, report


def resume_point(path: str | Path) -> StoreCheckpoint:
    """Checkpoint at the last complete record; absent file means zero."""
    p = Path(path)
    if not p.exists():
        return StoreCheckpoint(shard_path=str(p), records_committed=0, last_image_id=None)
    records, _ = load(p, dedup=False)
    last = records[-1].image_id if records else None
    return StoreCheckpoint(shard_path=str(p), records_committed=len(records), last_image_id=last)


def repair_shard(path: str | Path) -> int:
    """Truncate a partial trailing line left by a crash; returns bytes dropped."""
    p = Path(path)
    if not p.exists():
        return 0
    with open(p, "rb") as fh:
        data = fh.read()
    if not data or data.endswith(b"\n"):
        return 0
    end = data.rfind(b"\n")
    keep = end + 1 if end >= 0 else 0
    with open(p, "r+b") as fh:
        fh.truncate(keep)
    return len(data) - keep


def merge_shards(paths: Sequence[str | Path], out_path: str | Path) -> LoadReport:
    """Concatenate shards (in the given order) into one deduplicated shard."""
    records: list[AnnotationRecord] = []
    seen: set[tuple[str, str]] = set()
    total = partial = invalid = duplicates = 0
    for path in paths:
        recs, rep = load(path, dedup=False)
        total += rep.total_lines
        partial += rep.skipped_partial
        invalid += rep.skipped_invalid
        for rec in recs:
            if rec.dedup_key in seen:
                duplicates += 1
                continue
            seen.add(rec.dedup_key)
            records.append(rec)
    with ShardWriter(out_path, durable=False) as writer:
        for rec in records:
            writer.append(rec)
    return LoadReport(
        total_lines=total,
        loaded=len(records),
        skipped_partial=partial,
        skipped_invalid=invalid,
        duplicates=duplicates,
    )


# --- released-dump importer --------------------------------------------------


def read_field_mapping(path: str | Path) -> dict[str, str]:
    """Parse an `ours = theirs` mapping file (dotted paths on both sides).

    The right-hand side may be `const:<value>` for a fixed value, and path
    segments may carry one `[index]` suffix for list access.
    """
    mapping: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ParseError(f"expected 'ours = theirs', got {line!r}", line=lineno)
            mapping[key.strip()] = value.strip()
    required = {"image_id", "synset_wnid", "box.x", "box.y", "box.w", "box.h",
                "confidence", "expected_age", "gender_score"}
    missing = sorted(required - set(mapping))
    if missing:
        raise ParseError(f"mapping missing required fields: {', '.join(missing)}")
    return mapping


def _lookup(obj: object, path: str) -> object:
    if path.startswith("const:"):
        return path[len("const:"):]
    current = obj
    for segment in path.split("."):
        index = None
        if segment.endswith("]") and "[" in segment:
            segment, _, idx = segment[:-1].partition("[")
            index = int(idx)
        if segment:
            if not isinstance(current, dict) or segment not in current:
                raise ValidationError(f"source field {path!r} not found")
            current = current[segment]
        if index is not None:
            if not isinstance(current, list) or index >= len(current):
                raise ValidationError(f"source index in {path!r} out of range")
            current = current[index]
    return current


def import_dump(
    dump_path: str | Path, mapping: dict[str, str], out_path: str | Path
) -> LoadReport:
    """Convert an externally-released annotation dump into a canonical shard."""
    records: list[AnnotationRecord] = []
    seen: set[tuple[str, str]] = set()
    total = invalid = duplicates = 0
    with open(dump_path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            total += 1
            try:
                src = json.loads(line)
                obj = {
                    "image_id": _lookup(src, mapping["image_id"]),
                    "synset_wnid": _lookup(src, mapping["synset_wnid"]),
                    "box": {k: _lookup(src, mapping[f"box.{k}"]) for k in ("x", "y", "w", "h")},
                    "confidence": _lookup(src, mapping["confidence"]),
                    "expected_age": _lookup(src, mapping["expected_age"]),
                    "gender_score": _lookup(src, mapping["gender_score"]),
                    "annotator_version": _lookup(
                        src, mapping.get("annotator_version", "const:imported-dump")
                    ),
                    "timestamp": _lookup(src, mapping.get("timestamp", "const:0")),
                }
                rec = parse_record(obj)
            except (json.JSONDecodeError, ValidationError, ValueError):
                invalid += 1
                continue
            if rec.dedup_key in seen:
                duplicates += 1
                continue
            seen.add(rec.dedup_key)
            records.append(rec)

    with ShardWriter(out_path, durable=False) as writer:
        for rec in records:
            writer.append(rec)
    return LoadReport(
        total_lines=total,
        loaded=len(records),
        skipped_partial=0,
        skipped_invalid=invalid,
        duplicates=duplicates,
    )
