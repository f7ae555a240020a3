"""Exception types raised across the audit pipeline.

Every fatal condition maps to one of these so the CLI can emit a single
machine-readable error summary and a stable exit code.
"""

from __future__ import annotations


class AuditError(Exception):
    """Base class for all pipeline errors."""

    code = "audit_error"


class CycleError(AuditError):
    """The is-a edge list contains a cycle."""

    code = "cycle"


class DanglingEdgeError(AuditError):
    """An edge references a wnid that is not declared in the gloss map."""

    code = "dangling_edge"


class UnknownWnidError(AuditError):
    """A wnid was requested that does not exist in the hierarchy."""

    code = "unknown_wnid"


class ParseError(AuditError):
    """A line of an input file could not be parsed (strict mode)."""

    code = "parse"

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ValidationError(AuditError):
    """A record violates its schema invariants."""

    code = "validation"


class InvalidPosterior(AuditError):
    """An age posterior has the wrong length, a negative entry, or bad mass."""

    code = "invalid_posterior"


class OutOfRange(AuditError):
    """A value falls outside its documented domain."""

    code = "out_of_range"


class UnknownSynset(AuditError):
    """An annotation references a synset absent from the manifest."""

    code = "unknown_synset"


class EmptyAudit(AuditError):
    """Aggregation was requested over zero gated faces."""

    code = "empty_audit"


class NoGroundTruth(AuditError):
    """Average precision requested with no ground-truth boxes."""

    code = "no_ground_truth"


class MissingPrediction(AuditError):
    """An evaluation sample has no matching prediction."""

    code = "missing_prediction"


class MissingSkinType(AuditError):
    """Skin-type strata were requested but a sample lacks the label."""

    code = "missing_skin_type"


class NoDecodableImages(AuditError):
    """A synset contains no image that could be decoded."""

    code = "no_decodable_images"


class AnnotatorUnavailable(AuditError):
    """The configured worker endpoint could not be reached or handshaken."""

    code = "annotator_unavailable"


class WorkerProtocolError(AuditError):
    """The worker sent a response that violates the wire protocol."""

    code = "worker_protocol"


class AnnotationFailure(AuditError):
    """A single image failed to annotate; logged and counted, never fatal."""

    code = "annotation_failure"


class ConfigError(AuditError):
    """The audit configuration is invalid or incomplete."""

    code = "config"
