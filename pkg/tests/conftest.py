from __future__ import annotations

from pathlib import Path

import pytest

from demoaudit.dataset import Hierarchy, Manifest, load_hierarchy, load_manifest

TOY_EDGES = [("a", "root"), ("b", "root"), ("c", "a"), ("d", "a")]
TOY_GLOSSES = {
    "root": "entity",
    "a": "artifact",
    "b": "being",
    "c": "chair",
    "d": "drum",
}


@pytest.fixture
def toy_hierarchy() -> Hierarchy:
    return load_hierarchy(TOY_EDGES, TOY_GLOSSES)


def write_hierarchy_files(directory: Path, edges=None, glosses=None) -> tuple[Path, Path]:
    edges = TOY_EDGES if edges is None else edges
    glosses = TOY_GLOSSES if glosses is None else glosses
    edges_path = directory / "isa.txt"
    gloss_path = directory / "glosses.txt"
    edges_path.write_text("".join(f"{c} {p}\n" for c, p in edges), encoding="utf-8")
    gloss_path.write_text("".join(f"{w}\t{g}\n" for w, g in glosses.items()), encoding="utf-8")
    return edges_path, gloss_path


def write_manifest(
    directory: Path,
    entries: list[tuple[str, str, str]],
    name: str = "manifest.tsv",
) -> Path:
    path = directory / name
    path.write_text("".join(f"{i}\t{w}\t{u}\n" for i, w, u in entries), encoding="utf-8")
    return path


def synthetic_manifest(
    directory: Path, n_images: int, wnids: list[str], name: str = "manifest.tsv"
) -> Path:
    """Round-robins images over wnids; URIs point at files that do not exist."""
    entries = [
        (f"img{i:05d}", wnids[i % len(wnids)], f"images/img{i:05d}.jpg")
        for i in range(n_images)
    ]
    return write_manifest(directory, entries, name=name)


def load_toy_manifest(path: Path, hierarchy: Hierarchy | None = None) -> Manifest:
    manifest, _ = load_manifest(path, hierarchy)
    return manifest
