"""Audit configuration: plain-text key-value files plus CLI overrides.

Config files hold one dotted key per line (``gate.min_conf = 0.9``); CLI
flags override file values, and the AUDIT_WORKER_ENDPOINT environment
variable overrides the annotator endpoint above both. The effective config
hashes to a short digest embedded in every report header so outputs stay
attributable to the run that produced them.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError, ParseError

__all__ = ["AuditConfig", "parse_config_file", "build_config", "config_hash", "CONFIG_KEYS"]

ENV_ENDPOINT = "AUDIT_WORKER_ENDPOINT"


@dataclass
class AuditConfig:
    manifest: str | None = None
    hierarchy_edges: str | None = None
    hierarchy_glosses: str | None = None
    subset_root: str | None = None
    subset_list: str | None = None
    annotator: str = "stub"
    min_conf: float = 0.9
    min_images: int = 20
    min_det_rate: float = 0.15
    shards: int = 1
    out: str = "out"
    seed: int = 0


CONFIG_KEYS = {
    "manifest": ("manifest", str),
    "hierarchy.edges": ("hierarchy_edges", str),
    "hierarchy.glosses": ("hierarchy_glosses", str),
    "subset.root": ("subset_root", str),
    "subset.list": ("subset_list", str),
    "annotator": ("annotator", str),
    "gate.min_conf": ("min_conf", float),
    "ranking.min_images": ("min_images", int),
    "ranking.min_det_rate": ("min_det_rate", float),
    "shards": ("shards", int),
    "out": ("out", str),
    "seed": ("seed", int),
}

_ATTR_TO_KEY = {attr: key for key, (attr, _) in CONFIG_KEYS.items()}


def parse_config_file(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ParseError(f"expected 'key = value', got {line!r}", line=lineno)
            key = key.strip()
            if key not in CONFIG_KEYS:
                raise ConfigError(
                    f"unknown config key {key!r} (line {lineno}); valid keys: "
                    + ", ".join(sorted(CONFIG_KEYS))
                )
            values[key] = value.strip()
    return values


def _coerce(key: str, raw: str):
    _, typ = CONFIG_KEYS[key]
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {typ.__name__}") from exc


def build_config(
    file_values: dict[str, str] | None = None, overrides: dict[str, object] | None = None
) -> AuditConfig:
    """Defaults <- config file <- CLI overrides <- AUDIT_WORKER_ENDPOINT."""
    cfg = AuditConfig()
    for key, raw in (file_values or {}).items():
        attr, _ = CONFIG_KEYS[key]
        setattr(cfg, attr, _coerce(key, raw))
    for attr, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, attr, value)
    endpoint = os.environ.get(ENV_ENDPOINT)
    if endpoint:
        cfg.annotator = endpoint
    _validate(cfg)
    return cfg


def _validate(cfg: AuditConfig) -> None:
    if not 0.0 <= cfg.min_conf <= 1.0:
        raise ConfigError(f"gate.min_conf must be in [0, 1], got {cfg.min_conf}")
    if not 0.0 <= cfg.min_det_rate <= 1.0:
        raise ConfigError(f"ranking.min_det_rate must be in [0, 1], got {cfg.min_det_rate}")
    if cfg.min_images < 0:
        raise ConfigError(f"ranking.min_images must be >= 0, got {cfg.min_images}")
    if cfg.shards < 1:
        raise ConfigError(f"shards must be >= 1, got {cfg.shards}")
    if cfg.subset_root and cfg.subset_list:
        raise ConfigError("subset.root and subset.list are mutually exclusive")
    if not (cfg.annotator == "stub" or cfg.annotator.startswith(("cmd:", "tcp:"))):
        raise ConfigError(
            f"annotator must be 'stub', 'cmd:<command>' or 'tcp:<host>:<port>', got {cfg.annotator!r}"
        )


def config_hash(cfg: AuditConfig) -> str:
    """Digest of the content-affecting parameters.

    The output directory is excluded: the same audit written to two places
    must produce byte-identical files, headers included.
    """
    lines = []
    for f in sorted(fields(cfg), key=lambda f: f.name):
        if f.name == "out":
            continue
        value = getattr(cfg, f.name)
        if value is not None:
            lines.append(f"{_ATTR_TO_KEY[f.name]}={value}")
    digest = hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()
    return digest[:12]
