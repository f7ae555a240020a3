"""Streaming, mergeable audit statistics.

AggregateState is a commutative monoid: shard-local states built by
``accumulate`` combine with ``merge`` into exactly the state a single pass
would have produced, whatever the split. All internal math is on exact
integer counts (plus per-synset sets of detected image ids, needed because
several faces of one image must count that image once); percentages are
rounded half-up to two decimals only at presentation time.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Iterable

from .annotator import AGE_GROUPS, GENDERS, FaceAnnotation
from .dataset import Hierarchy, ImageRecord, Manifest
from .errors import EmptyAudit, UnknownSynset

__all__ = [
    "SubgroupKey",
    "AggregateState",
    "merge",
    "TopLevelTable",
    "top_level_table",
    "SynsetRankRow",
    "synset_gender_ranking",
    "pct_half_up",
    "DEFAULT_MIN_IMAGES",
    "DEFAULT_MIN_DET_RATE",
]

SubgroupKey = tuple[str, str]  # (age_group, gender)

DEFAULT_MIN_IMAGES = 20
DEFAULT_MIN_DET_RATE = 0.15


def pct_half_up(numerator: int, denominator: int) -> Decimal:
    """100 * numerator / denominator, rounded half-up to 2 decimals."""
    return (Decimal(100 * numerator) / Decimal(denominator)).quantize(
        Decimal("0.01"), rounding=ROUND_HALF_UP
    )


@dataclass
class AggregateState:
    """Per-subgroup and per-synset tallies of gated face annotations."""

    subgroup_counts: Counter = field(default_factory=Counter)  # SubgroupKey -> faces
    synset_faces: Counter = field(default_factory=Counter)  # wnid -> faces
    synset_gender: Counter = field(default_factory=Counter)  # (wnid, gender) -> faces
    detected_images: dict[str, set[str]] = field(default_factory=dict)  # wnid -> image ids

    @property
    def total_faces(self) -> int:
        return sum(self.subgroup_counts.values())

    def accumulate(self, ann: FaceAnnotation, image: ImageRecord, manifest: Manifest) -> None:
        """Count one gated annotation; raises UnknownSynset on a stray wnid."""
        wnid = image.synset_wnid
        if wnid not in manifest.synset_image_counts:
            raise UnknownSynset(f"synset {wnid!r} absent from manifest")
        self.subgroup_counts[(ann.age_group, ann.gender_label)] += 1
        self.synset_faces[wnid] += 1
        self.synset_gender[(wnid, ann.gender_label)] += 1
        self.detected_images.setdefault(wnid, set()).add(image.image_id)

    def merge(self, other: "AggregateState") -> "AggregateState":
        """Pointwise sum (counts) and union (detected-image sets); non-mutating."""
        merged = AggregateState()
        merged.subgroup_counts.update(self.subgroup_counts)
        merged.subgroup_counts.update(other.subgroup_counts)
        merged.synset_faces.update(self.synset_faces)
        merged.synset_faces.update(other.synset_faces)
        merged.synset_gender.update(self.synset_gender)
        merged.synset_gender.update(other.synset_gender)
        for wnid, ids in self.detected_images.items():
            merged.detected_images[wnid] = set(ids)
        for wnid, ids in other.detected_images.items():
            merged.detected_images.setdefault(wnid, set()).update(ids)
        return merged


def merge(a: AggregateState, b: AggregateState) -> AggregateState:
    return a.merge(b)


@dataclass(frozen=True)
class TopLevelTable:
    """Age-group x gender percentage table over all gated faces."""

    rows: tuple[str, ...]  # age groups plus "All"
    cols: tuple[str, ...]  # ("male", "female", "all")
    cells: dict[tuple[str, str], Decimal]
    counts: dict[tuple[str, str], int]
    total_faces: int


def top_level_table(state: AggregateState) -> TopLevelTable:
    """Percentage-of-dataset per (age group, gender), with All marginals.

    Every cell is rounded independently from exact counts, so rows may be off
    their printed marginals by a rounding residue of at most 0.02.
    """
    total = state.total_faces
    if total == 0:
        raise EmptyAudit("no gated faces to aggregate")

    counts: dict[tuple[str, str], int] = {}
    for age in AGE_GROUPS:
        for gender in GENDERS:
            counts[(age, gender)] = state.subgroup_counts.get((age, gender), 0)
        counts[(age, "all")] = sum(counts[(age, g)] for g in GENDERS)
    for gender in GENDERS:
        counts[("All", gender)] = sum(counts[(age, gender)] for age in AGE_GROUPS)
    counts[("All", "all")] = total

    cells = {key: pct_half_up(n, total) for key, n in counts.items()}
    return TopLevelTable(
        rows=AGE_GROUPS + ("All",),
        cols=("male", "female", "all"),
        cells=cells,
        counts=counts,
        total_faces=total,
    )


@dataclass(frozen=True)
class SynsetRankRow:
    wnid: str
    label: str
    pct_male: Decimal
    pct_female: Decimal
    n_faces: int


def _passes_filters(
    n_images: int, n_detected: int, min_images: int, min_det_rate: Fraction
) -> bool:
    if n_images < min_images:
        return False
    # Exact rational comparison: n_detected / n_images >= min_det_rate.
    return Fraction(n_detected, n_images) >= min_det_rate


def synset_gender_ranking(
    state: AggregateState,
    manifest: Manifest,
    hierarchy: Hierarchy | None = None,
    min_images: int = DEFAULT_MIN_IMAGES,
    min_det_rate: float = DEFAULT_MIN_DET_RATE,
) -> tuple[list[SynsetRankRow], list[SynsetRankRow]]:
    """Rank synsets by male (resp. female) share of their gated faces.

    Synsets with fewer than ``min_images`` manifest images, or with gated
    detections in fewer than ``min_det_rate`` of their images, are excluded.
    Ties break lexicographically by wnid. Percentages are over faces.
    """
    rate = Fraction(str(min_det_rate))
    rows: list[tuple[Fraction, SynsetRankRow]] = []
    for wnid in sorted(state.synset_faces):
        n_images = manifest.synset_image_counts.get(wnid, 0)
        if n_images == 0:
            raise UnknownSynset(f"synset {wnid!r} absent from manifest")
        n_detected = len(state.detected_images.get(wnid, ()))
        if not _passes_filters(n_images, n_detected, min_images, rate):
            continue
        n_faces = state.synset_faces[wnid]
        n_male = state.synset_gender.get((wnid, "male"), 0)
        label = ""
        if hierarchy is not None and wnid in hierarchy:
            label = hierarchy.gloss(wnid)
        rows.append(
            (
                Fraction(n_male, n_faces),
                SynsetRankRow(
                    wnid=wnid,
                    label=label or wnid,
                    pct_male=pct_half_up(n_male, n_faces),
                    pct_female=pct_half_up(n_faces - n_male, n_faces),
                    n_faces=n_faces,
                ),
            )
        )

    male_ranked = [r for _, r in sorted(rows, key=lambda t: (-t[0], t[1].wnid))]
    female_ranked = [r for _, r in sorted(rows, key=lambda t: (t[0], t[1].wnid))]
    return male_ranked, female_ranked


def accumulate_stream(
    pairs: Iterable[tuple[FaceAnnotation, ImageRecord]], manifest: Manifest
) -> AggregateState:
    """Single-pass accumulation helper; the oracle twin of sharded merging."""
    state = AggregateState()
    for ann, image in pairs:
        state.accumulate(ann, image, manifest)
    return state
