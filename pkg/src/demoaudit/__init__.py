"""Demographic auditing pipeline for synset-organized image datasets."""

__version__ = "0.1.0"

from .annotator import (  # noqa: F401
    AGE_GROUPS,
    GENDERS,
    Box,
    FaceAnnotation,
    FaceDetection,
    StubAnnotator,
    age_group,
    expected_age,
    gate_detections,
    gender_label,
)
from .dataset import Hierarchy, ImageRecord, Manifest, load_hierarchy, load_manifest, subtree  # noqa: F401
from .errors import AuditError  # noqa: F401
