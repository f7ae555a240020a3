"""Annotator contract and the pure post-processing math behind it.

A face annotator turns an image into detections plus apparent-age and gender
estimates. This module pins down the numeric conventions every backend must
follow: a 101-bin age posterior reduced by expectation, a continuous gender
score in [0, 1] read as P(female) and thresholded at 0.5 (ties go to female),
five integer-labeled age groups, and a confidence gate applied before any
demographic annotation. It also ships a deterministic stub backend used for
tests and dry runs.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Protocol, Sequence

from .dataset import ImageRecord
from .errors import InvalidPosterior, OutOfRange

__all__ = [
    "AGE_GROUPS",
    "GENDERS",
    "Box",
    "FaceDetection",
    "FaceAnnotation",
    "expected_age",
    "validate_posterior",
    "gender_label",
    "age_group",
    "gate_detections",
    "make_annotation",
    "Annotator",
    "StubAnnotator",
    "stub_annotate",
    "DEFAULT_MIN_CONF",
    "POSTERIOR_BINS",
]

POSTERIOR_BINS = 101
POSTERIOR_MASS_TOL = 1e-6
DEFAULT_MIN_CONF = 0.9

AGE_GROUPS = ("0-14", "15-29", "30-44", "45-59", "60+")
_AGE_GROUP_UPPER = (14, 29, 44, 59, 100)
GENDERS = ("male", "female")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in pixels, (x, y) top-left corner."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise OutOfRange(f"box sides must be positive, got w={self.w}, h={self.h}")


@dataclass(frozen=True)
class FaceDetection:
    image_id: str
    box: Box
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise OutOfRange(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class FaceAnnotation:
    detection: FaceDetection
    expected_age: float
    age_group: str
    gender_score: float
    gender_label: str
    annotator_version: str


def validate_posterior(probs: Sequence[float]) -> None:
    if len(probs) != POSTERIOR_BINS:
        raise InvalidPosterior(f"expected {POSTERIOR_BINS} bins, got {len(probs)}")
    for i, p in enumerate(probs):
        if p < 0:
            raise InvalidPosterior(f"negative probability {p} at bin {i}")
    mass = math.fsum(probs)
    if abs(mass - 1.0) > POSTERIOR_MASS_TOL:
        raise InvalidPosterior(f"probability mass {mass} outside 1 ± {POSTERIOR_MASS_TOL}")


def expected_age(probs: Sequence[float]) -> float:
    """Expectation over the 101 one-year age bins.

    Accumulated in exact rational arithmetic and rounded once at the end, so
    symmetric posteriors (e.g. uniform) reduce without float drift.
    """
    validate_posterior(probs)
    total = sum((Fraction(p) * i for i, p in enumerate(probs)), start=Fraction(0))
    return float(total)


def gender_label(score: float, threshold: float = 0.5) -> str:
    """"female" iff score >= threshold; the exact tie goes to female."""
    if not 0.0 <= score <= 1.0:
        raise OutOfRange(f"gender score {score} outside [0, 1]")
    return "female" if score >= threshold else "male"


def age_group(age: float) -> str:
    """Bin an age in years by floor into 0-14 / 15-29 / 30-44 / 45-59 / 60+.

    The floored value must land in 0..100, so any fractional part above the
    top integer bin is still accepted (floor(100.9) == 100).
    """
    if age < 0.0:
        raise OutOfRange(f"age {age} below 0")
    floored = math.floor(age)
    if floored > 100:
        raise OutOfRange(f"age {age} above the 100-year top bin")
    for label, upper in zip(AGE_GROUPS, _AGE_GROUP_UPPER):
        if floored <= upper:
            return label
    raise OutOfRange(f"age {age} did not bin")  # unreachable for valid input


def gate_detections(
    detections: Sequence[FaceDetection], min_conf: float = DEFAULT_MIN_CONF
) -> list[FaceDetection]:
    """Order-preserving filter keeping confidence >= min_conf (boundary kept)."""
    return [d for d in detections if d.confidence >= min_conf]


def make_annotation(
    detection: FaceDetection,
    expected_age_years: float,
    gender_score: float,
    annotator_version: str,
) -> FaceAnnotation:
    """Build an annotation with its derived labels, keeping them consistent."""
    return FaceAnnotation(
        detection=detection,
        expected_age=expected_age_years,
        age_group=age_group(expected_age_years),
        gender_score=gender_score,
        gender_label=gender_label(gender_score),
        annotator_version=annotator_version,
    )


class Annotator(Protocol):
    """Pluggable backend: image record in, ungated annotations out."""

    version: str

    def annotate(self, image: ImageRecord) -> list[FaceAnnotation]: ...

    def close(self) -> None: ...


# --- deterministic stub backend -------------------------------------------
#
# All values are small decimal fractions of sha256 words, so they serialize
# exactly at 6 decimals and reproduce bit-for-bit on any platform. The same
# derivation is implemented by the standalone inference worker's stub batch
# mode; the two must stay in lockstep.

STUB_VERSION_PREFIX = "stub-v1-seed"


def _digest_words(parts: Sequence[object]) -> list[int]:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "big") for i in range(0, 32, 4)]


def stub_annotate(image: ImageRecord, seed: int) -> list[FaceAnnotation]:
    """Pseudo-random annotations derived from hash(image_id, seed).

    Zero to two faces per image; confidences span [0.8, 1.0] so roughly half
    the faces clear the default 0.9 gate. Never touches pixels.
    """
    version = f"{STUB_VERSION_PREFIX}{seed}"
    n_faces = _digest_words([image.image_id, seed])[0] % 3
    annotations = []
    for k in range(n_faces):
        w = _digest_words([image.image_id, seed, k])
        box = Box(
            x=(w[0] % 44800) / 100,
            y=(w[1] % 44800) / 100,
            w=16 + (w[2] % 19200) / 100,
            h=16 + (w[3] % 19200) / 100,
        )
        confidence = (80000 + (w[4] % 20001)) / 100000
        age = (w[5] % 10001) / 100
        score = (w[6] % 1000001) / 1000000
        annotations.append(
            make_annotation(
                FaceDetection(image_id=image.image_id, box=box, confidence=confidence),
                expected_age_years=age,
                gender_score=score,
                annotator_version=version,
            )
        )
    return annotations


class StubAnnotator:
    def __init__(self, seed: int = 0):
        self.seed = seed
        self.version = f"{STUB_VERSION_PREFIX}{seed}"

    def annotate(self, image: ImageRecord) -> list[FaceAnnotation]:
        return stub_annotate(image, self.seed)

    def close(self) -> None:
        pass
