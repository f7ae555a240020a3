"""Benchmark evaluation of annotator models, stratified by subgroup.

Detection quality is scored as average precision over confidence-ranked
detections greedily matched to ground truth at IoU >= 0.5, with the area
taken under the all-points interpolated precision-recall curve. The IoU
threshold and interpolation are explicit parameters so the harness can be
re-run under other conventions. Age error and gender accuracy are stratified
over subgroup cells; "All" marginals are always recomputed from pooled
counts, never averaged from cell values. Empty strata report None (rendered
n/a) rather than a fabricated number.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .annotator import AGE_GROUPS, GENDERS, Box, FaceDetection, age_group
from .errors import (
    MissingPrediction,
    MissingSkinType,
    NoGroundTruth,
    OutOfRange,
    ParseError,
)

__all__ = [
    "SKIN_TYPES",
    "EvalSample",
    "MatchResult",
    "StratifiedTable",
    "iou",
    "match_detections",
    "average_precision",
    "stratified_ap",
    "stratified_mae",
    "stratified_accuracy",
    "load_eval_samples",
    "load_detection_predictions",
    "load_age_predictions",
    "load_gender_predictions",
]

SKIN_TYPES = ("I", "II", "III", "IV", "V", "VI")


@dataclass(frozen=True)
class EvalSample:
    """Ground truth for one benchmark image."""

    image_id: str
    boxes: tuple[Box, ...]
    age: float
    gender: str
    skin_type: str | None = None


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int, float], ...]  # (det_index, gt_index, iou)
    unmatched_dets: tuple[int, ...]
    unmatched_gts: tuple[int, ...]


@dataclass(frozen=True)
class StratifiedTable:
    """Metric values per stratum cell; (value, n) with value None for empty cells."""

    metric_name: str
    row_labels: tuple[str, ...]  # strata plus "All"
    col_labels: tuple[str, ...]  # ("male", "female", "all")
    cells: Mapping[tuple[str, str], tuple[float | None, int]]

    def value(self, row: str, col: str) -> float | None:
        return self.cells[(row, col)][0]


def iou(a: Box, b: Box) -> float:
    """Intersection area over union area of two boxes."""
    ix = max(a.x, b.x)
    iy = max(a.y, b.y)
    ix2 = min(a.x + a.w, b.x + b.w)
    iy2 = min(a.y + a.h, b.y + b.h)
    iw = max(0.0, ix2 - ix)
    ih = max(0.0, iy2 - iy)
    inter = iw * ih
    if inter <= 0.0:
        return 0.0
    union = a.w * a.h + b.w * b.h - inter
    return inter / union


def match_detections(
    dets: Sequence[FaceDetection], gts: Sequence[Box], iou_threshold: float = 0.5
) -> MatchResult:
    """Greedy one-to-one matching.

    Detections are taken in descending confidence (ties keep input order);
    each is paired with the unmatched ground truth of highest IoU, provided
    that IoU reaches the threshold. IoU ties go to the lowest gt index.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    gt_taken = [False] * len(gts)
    pairs: list[tuple[int, int, float]] = []
    unmatched_dets: list[int] = []
    for det_idx in order:
        best_iou = 0.0
        best_gt = -1
        for gt_idx, gt in enumerate(gts):
            if gt_taken[gt_idx]:
                continue
            overlap = iou(dets[det_idx].box, gt)
            if overlap > best_iou:
                best_iou = overlap
                best_gt = gt_idx
        if best_gt >= 0 and best_iou >= iou_threshold:
            gt_taken[best_gt] = True
            pairs.append((det_idx, best_gt, best_iou))
        else:
            unmatched_dets.append(det_idx)
    unmatched_gts = [i for i, taken in enumerate(gt_taken) if not taken]
    return MatchResult(
        pairs=tuple(pairs),
        unmatched_dets=tuple(unmatched_dets),
        unmatched_gts=tuple(unmatched_gts),
    )


def _ranked_tp_flags(
    dets_by_image: Mapping[str, Sequence[FaceDetection]],
    gts_by_image: Mapping[str, Sequence[Box]],
    iou_threshold: float,
) -> list[bool]:
    """TP/FP flags of all detections in global confidence-descending order."""
    ranked: list[tuple[float, int, bool]] = []
    order = 0
    for image_id in sorted(set(dets_by_image) | set(gts_by_image)):
        dets = list(dets_by_image.get(image_id, ()))
        gts = list(gts_by_image.get(image_id, ()))
        matched = {di for di, _, _ in match_detections(dets, gts, iou_threshold).pairs}
        for det_idx in sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i)):
            ranked.append((dets[det_idx].confidence, order, det_idx in matched))
            order += 1
    ranked.sort(key=lambda t: (-t[0], t[1]))
    return [tp for _, _, tp in ranked]


def average_precision(
    dets_by_image: Mapping[str, Sequence[FaceDetection]],
    gts_by_image: Mapping[str, Sequence[Box]],
    iou_threshold: float = 0.5,
) -> float:
    """Area under the all-points interpolated precision-recall curve, in [0, 1]."""
    n_gt = sum(len(v) for v in gts_by_image.values())
    if n_gt == 0:
        raise NoGroundTruth("average precision needs at least one ground-truth box")

    flags = _ranked_tp_flags(dets_by_image, gts_by_image, iou_threshold)
    if not flags:
        return 0.0
    tp = np.cumsum(np.asarray(flags, dtype=np.float64))
    ranks = np.arange(1, len(flags) + 1, dtype=np.float64)
    precision = tp / ranks
    recall = tp / n_gt

    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    changed = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changed + 1] - mrec[changed]) * mpre[changed + 1]))


# --- stratification ----------------------------------------------------------


def _sample_row(sample: EvalSample, strata: str) -> str:
    if strata == "age":
        return age_group(sample.age)
    if strata == "skin":
        if sample.skin_type is None:
            raise MissingSkinType(f"sample {sample.image_id!r} has no skin type")
        return sample.skin_type
    raise ValueError(f"unknown strata {strata!r}")


def _cell_groups(
    samples: Sequence[EvalSample], strata: str
) -> tuple[tuple[str, ...], dict[tuple[str, str], list[EvalSample]]]:
    row_labels = AGE_GROUPS if strata == "age" else SKIN_TYPES
    groups: dict[tuple[str, str], list[EvalSample]] = {}
    for sample in samples:
        groups.setdefault((_sample_row(sample, strata), sample.gender), []).append(sample)
    return row_labels, groups


def _marginal_selectors(row_labels: Sequence[str]):
    for row in tuple(row_labels) + ("All",):
        for col in GENDERS + ("all",):
            yield row, col


def _select(
    groups: dict[tuple[str, str], list[EvalSample]], row: str, col: str
) -> list[EvalSample]:
    selected: list[EvalSample] = []
    for (r, c), members in groups.items():
        if (row == "All" or r == row) and (col == "all" or c == col):
            selected.extend(members)
    return selected


def stratified_ap(
    dets_by_image: Mapping[str, Sequence[FaceDetection]],
    samples: Sequence[EvalSample],
    iou_threshold: float = 0.5,
) -> StratifiedTable:
    """Detection AP per (age group, gender) cell, as percentages.

    Each cell is an independent AP over the cell's images only: a detection
    is scored in the stratum of its own image, so false positives on an
    image penalize exactly that image's subgroup. Cells without ground-truth
    boxes are None.
    """
    row_labels, groups = _cell_groups(samples, "age")
    cells: dict[tuple[str, str], tuple[float | None, int]] = {}
    for row, col in _marginal_selectors(row_labels):
        members = _select(groups, row, col)
        n_boxes = sum(len(s.boxes) for s in members)
        if n_boxes == 0:
            cells[(row, col)] = (None, 0)
            continue
        dets = {s.image_id: dets_by_image.get(s.image_id, ()) for s in members}
        gts = {s.image_id: s.boxes for s in members}
        ap = average_precision(dets, gts, iou_threshold)
        cells[(row, col)] = (100.0 * ap, n_boxes)
    return StratifiedTable(
        metric_name="average_precision_pct",
        row_labels=tuple(row_labels) + ("All",),
        col_labels=GENDERS + ("all",),
        cells=cells,
    )


def stratified_mae(
    preds: Mapping[str, float], samples: Sequence[EvalSample]
) -> StratifiedTable:
    """Mean absolute age error in years per (age group, gender) cell."""
    for sample in samples:
        if sample.image_id not in preds:
            raise MissingPrediction(f"no age prediction for {sample.image_id!r}")
    row_labels, groups = _cell_groups(samples, "age")
    cells: dict[tuple[str, str], tuple[float | None, int]] = {}
    for row, col in _marginal_selectors(row_labels):
        members = _select(groups, row, col)
        if not members:
            cells[(row, col)] = (None, 0)
            continue
        errors = [abs(preds[s.image_id] - s.age) for s in members]
        cells[(row, col)] = (math.fsum(errors) / len(errors), len(errors))
    return StratifiedTable(
        metric_name="age_mae_years",
        row_labels=tuple(row_labels) + ("All",),
        col_labels=GENDERS + ("all",),
        cells=cells,
    )


def stratified_accuracy(
    preds: Mapping[str, str], samples: Sequence[EvalSample], strata: str = "age"
) -> StratifiedTable:
    """Binary gender accuracy (percent) per cell; strata is "age" or "skin"."""
    for sample in samples:
        if sample.image_id not in preds:
            raise MissingPrediction(f"no gender prediction for {sample.image_id!r}")
    row_labels, groups = _cell_groups(samples, strata)
    cells: dict[tuple[str, str], tuple[float | None, int]] = {}
    for row, col in _marginal_selectors(row_labels):
        members = _select(groups, row, col)
        if not members:
            cells[(row, col)] = (None, 0)
            continue
        correct = sum(1 for s in members if preds[s.image_id] == s.gender)
        cells[(row, col)] = (100.0 * correct / len(members), len(members))
    return StratifiedTable(
        metric_name=f"gender_accuracy_pct_{strata}",
        row_labels=tuple(row_labels) + ("All",),
        col_labels=GENDERS + ("all",),
        cells=cells,
    )


# --- file loading -------------------------------------------------------------


def _parse_box(obj: dict, lineno: int, with_conf: bool) -> tuple[Box, float]:
    try:
        box = Box(float(obj["x"]), float(obj["y"]), float(obj["w"]), float(obj["h"]))
        conf = float(obj["conf"]) if with_conf else 0.0
    except (KeyError, TypeError, ValueError, OutOfRange) as exc:
        raise ParseError(f"bad box object: {exc}", line=lineno) from exc
    return box, conf


def _iter_jsonl(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad JSON: {exc}", line=lineno) from exc


def load_eval_samples(path: str | Path) -> list[EvalSample]:
    """Ground-truth samples from a .jsonl benchmark label file (strict parse)."""
    samples: list[EvalSample] = []
    seen: set[str] = set()
    for lineno, obj in _iter_jsonl(path):
        try:
            image_id = str(obj["image_id"])
            boxes = tuple(_parse_box(b, lineno, with_conf=False)[0] for b in obj.get("boxes", []))
            age = float(obj["age"])
            gender = str(obj["gender"])
            skin = obj.get("skin_type")
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad sample: {exc}", line=lineno) from exc
        if image_id in seen:
            raise ParseError(f"duplicate image_id {image_id!r}", line=lineno)
        seen.add(image_id)
        if not 0.0 <= age <= 100.0:
            raise ParseError(f"age {age} outside [0, 100]", line=lineno)
        if gender not in GENDERS:
            raise ParseError(f"gender must be one of {GENDERS}, got {gender!r}", line=lineno)
        if skin is not None and skin not in SKIN_TYPES:
            raise ParseError(f"skin_type must be one of {SKIN_TYPES}, got {skin!r}", line=lineno)
        samples.append(
            EvalSample(image_id=image_id, boxes=boxes, age=age, gender=gender, skin_type=skin)
        )
    return samples


def load_detection_predictions(path: str | Path) -> dict[str, list[FaceDetection]]:
    preds: dict[str, list[FaceDetection]] = {}
    for lineno, obj in _iter_jsonl(path):
        try:
            image_id = str(obj["image_id"])
            raw_boxes = obj["boxes"]
        except (KeyError, TypeError) as exc:
            raise ParseError(f"bad prediction: {exc}", line=lineno) from exc
        dets = []
        for b in raw_boxes:
            box, conf = _parse_box(b, lineno, with_conf=True)
            try:
                dets.append(FaceDetection(image_id=image_id, box=box, confidence=conf))
            except OutOfRange as exc:
                raise ParseError(str(exc), line=lineno) from exc
        preds.setdefault(image_id, []).extend(dets)
    return preds


def load_age_predictions(path: str | Path) -> dict[str, float]:
    preds: dict[str, float] = {}
    for lineno, obj in _iter_jsonl(path):
        try:
            preds[str(obj["image_id"])] = float(obj["expected_age"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad age prediction: {exc}", line=lineno) from exc
    return preds


def load_gender_predictions(path: str | Path) -> dict[str, str]:
    """Accepts either a hard label or a score thresholded at 0.5."""
    from .annotator import gender_label as _label

    preds: dict[str, str] = {}
    for lineno, obj in _iter_jsonl(path):
        try:
            image_id = str(obj["image_id"])
            if "gender_label" in obj:
                label = str(obj["gender_label"])
                if label not in GENDERS:
                    raise ValueError(f"label must be one of {GENDERS}, got {label!r}")
            else:
                label = _label(float(obj["gender_score"]))
            preds[image_id] = label
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad gender prediction: {exc}", line=lineno) from exc
    return preds
