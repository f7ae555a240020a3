"""Synset hierarchy and image manifest loading.

The hierarchy is a DAG of wnid-keyed synsets read from two plain-text files
(an is-a edge list and a gloss map, mirroring public WordNet distributions).
The manifest is a tab-separated file with one image record per line. Both
structures are immutable after load and safe for concurrent readers.
"""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import CycleError, DanglingEdgeError, ParseError, UnknownWnidError

__all__ = [
    "Synset",
    "Hierarchy",
    "ImageRecord",
    "Manifest",
    "ManifestLoadReport",
    "AuditSubset",
    "load_hierarchy",
    "load_hierarchy_files",
    "read_edge_file",
    "read_gloss_file",
    "subtree",
    "load_manifest",
    "load_wnid_list",
]


@dataclass(frozen=True)
class Synset:
    wnid: str
    gloss: str
    parents: tuple[str, ...]
    children: tuple[str, ...]


@dataclass(frozen=True)
class Hierarchy:
    """Immutable DAG of synsets keyed by wnid."""

    nodes: Mapping[str, Synset]

    def __contains__(self, wnid: str) -> bool:
        return wnid in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, wnid: str) -> Synset:
        try:
            return self.nodes[wnid]
        except KeyError:
            raise UnknownWnidError(f"wnid {wnid!r} not in hierarchy") from None

    def gloss(self, wnid: str) -> str:
        return self.node(wnid).gloss

    def roots(self) -> list[str]:
        return sorted(w for w, n in self.nodes.items() if not n.parents)

    def depth(self, wnid: str) -> int:
        """Shortest distance from any root (node without parents)."""
        node = self.node(wnid)
        if not node.parents:
            return 0
        seen = {wnid}
        queue = deque([(wnid, 0)])
        while queue:
            current, d = queue.popleft()
            for parent in self.nodes[current].parents:
                if not self.nodes[parent].parents:
                    return d + 1
                if parent not in seen:
                    seen.add(parent)
                    queue.append((parent, d + 1))
        raise CycleError(f"no root reachable from {wnid!r}")


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    synset_wnid: str
    uri: str
    status: str = "present"  # "present" | "missing"


@dataclass(frozen=True)
class ManifestLoadReport:
    total_lines: int
    loaded: int
    missing: int
    skipped: int


@dataclass(frozen=True)
class Manifest:
    """Ordered, immutable collection of image records."""

    records: tuple[ImageRecord, ...]
    by_id: Mapping[str, ImageRecord] = field(repr=False)
    synset_image_counts: Mapping[str, int] = field(repr=False)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def synsets(self) -> set[str]:
        return set(self.synset_image_counts)

    def restrict(self, wnids: Iterable[str]) -> "Manifest":
        keep = set(wnids)
        return _build_manifest([r for r in self.records if r.synset_wnid in keep])


@dataclass(frozen=True)
class AuditSubset:
    """Named set of synsets selected for an audit.

    ``image_count`` is zero until the subset is bound to a manifest via
    :meth:`with_manifest`.
    """

    name: str
    wnids: tuple[str, ...]
    image_count: int = 0

    def with_manifest(self, manifest: Manifest) -> "AuditSubset":
        count = sum(manifest.synset_image_counts.get(w, 0) for w in self.wnids)
        return replace(self, image_count=count)


def _build_manifest(records: Sequence[ImageRecord]) -> Manifest:
    by_id = {r.image_id: r for r in records}
    counts: dict[str, int] = {}
    for r in records:
        counts[r.synset_wnid] = counts.get(r.synset_wnid, 0) + 1
    return Manifest(records=tuple(records), by_id=by_id, synset_image_counts=counts)


def load_hierarchy(
    edges: Sequence[tuple[str, str]],
    glosses: Mapping[str, str],
    strict: bool = True,
) -> Hierarchy:
    """Build a hierarchy from (child, parent) edges and a wnid->gloss map.

    In strict mode every wnid referenced by an edge must be declared in the
    gloss map; lenient mode creates missing nodes with an empty gloss.
    Cycles are always rejected.
    """
    if not edges:
        raise ParseError("edge list is empty")

    wnids = set(glosses)
    for child, parent in edges:
        for wnid in (child, parent):
            if wnid not in wnids:
                if strict:
                    raise DanglingEdgeError(
                        f"edge ({child!r}, {parent!r}) references undeclared wnid {wnid!r}"
                    )
                wnids.add(wnid)

    parents: dict[str, list[str]] = {w: [] for w in wnids}
    children: dict[str, list[str]] = {w: [] for w in wnids}
    seen_edges: set[tuple[str, str]] = set()
    for child, parent in edges:
        if (child, parent) in seen_edges:
            continue
        seen_edges.add((child, parent))
        parents[child].append(parent)
        children[parent].append(child)

    _reject_cycles(wnids, children)

    nodes = {
        w: Synset(
            wnid=w,
            gloss=glosses.get(w, ""),
            parents=tuple(sorted(parents[w])),
            children=tuple(sorted(children[w])),
        )
        for w in wnids
    }
    return Hierarchy(nodes=nodes)


def _reject_cycles(wnids: set[str], children: Mapping[str, list[str]]) -> None:
    # Kahn's algorithm; leftover nodes imply a cycle among the is-a edges.
    indegree = {w: 0 for w in wnids}
    for parent in wnids:
        for child in children[parent]:
            indegree[child] += 1
    queue = deque(w for w, d in indegree.items() if d == 0)
    visited = 0
    while queue:
        current = queue.popleft()
        visited += 1
        for child in children[current]:
            indegree[child] -= 1
            if indegree[child] == 0:
                queue.append(child)
    if visited != len(wnids):
        cyclic = sorted(w for w, d in indegree.items() if d > 0)
        raise CycleError(f"is-a edges form a cycle involving {cyclic[:5]}")


def read_edge_file(path: str | Path) -> list[tuple[str, str]]:
    """Read "child parent" pairs, one per line; blank lines and # comments skipped."""
    edges: list[tuple[str, str]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"expected 'child parent', got {line!r}", line=lineno)
            edges.append((parts[0], parts[1]))
    return edges


def read_gloss_file(path: str | Path) -> dict[str, str]:
    """Read "wnid<TAB>gloss" lines into a mapping."""
    glosses: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            wnid, sep, gloss = line.partition("\t")
            if not sep:
                raise ParseError(f"expected 'wnid<TAB>gloss', got {line!r}", line=lineno)
            glosses[wnid.strip()] = gloss.strip()
    return glosses


def load_hierarchy_files(
    edges_path: str | Path, glosses_path: str | Path, strict: bool = True
) -> Hierarchy:
    return load_hierarchy(read_edge_file(edges_path), read_gloss_file(glosses_path), strict=strict)


def subtree(h: Hierarchy, root: str) -> AuditSubset:
    """Root plus all transitive descendants, in lexicographic wnid order."""
    if root not in h:
        raise UnknownWnidError(f"wnid {root!r} not in hierarchy")
    members = {root}
    queue = deque([root])
    while queue:
        current = queue.popleft()
        for child in h.nodes[current].children:
            if child not in members:
                members.add(child)
                queue.append(child)
    return AuditSubset(name=f"subtree:{root}", wnids=tuple(sorted(members)))


def _uri_is_checkable(uri: str) -> bool:
    # Remote locators cannot be stat'ed at load time; treat them as present.
    return "://" not in uri


def load_manifest(
    path: str | Path,
    hierarchy: Hierarchy | None = None,
    strict: bool = True,
    base_dir: str | Path | None = None,
) -> tuple[Manifest, ManifestLoadReport]:
    """Load `image_id<TAB>wnid<TAB>uri` records.

    Records whose synset does not resolve in ``hierarchy`` or whose file is
    absent are retained with status="missing" and counted. Malformed or
    duplicate-id lines raise :class:`ParseError` in strict mode and are
    skipped (with a count) in lenient mode.
    """
    base = Path(base_dir) if base_dir is not None else Path(path).parent
    records: list[ImageRecord] = []
    seen_ids: set[str] = set()
    total = missing = skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            total += 1
            parts = line.split("\t")
            if len(parts) != 3 or not all(p.strip() for p in parts):
                if strict:
                    raise ParseError(f"expected 'image_id<TAB>wnid<TAB>uri', got {line!r}", line=lineno)
                skipped += 1
                continue
            image_id, wnid, uri = (p.strip() for p in parts)
            if image_id in seen_ids:
                if strict:
                    raise ParseError(f"duplicate image_id {image_id!r}", line=lineno)
                skipped += 1
                continue
            seen_ids.add(image_id)

            status = "present"
            if hierarchy is not None and wnid not in hierarchy:
                status = "missing"
            elif _uri_is_checkable(uri):
                resolved = Path(uri) if os.path.isabs(uri) else base / uri
                if not resolved.exists():
                    status = "missing"
            if status == "missing":
                missing += 1
            records.append(ImageRecord(image_id=image_id, synset_wnid=wnid, uri=uri, status=status))

    report = ManifestLoadReport(
        total_lines=total, loaded=len(records), missing=missing, skipped=skipped
    )
    return _build_manifest(records), report


def load_wnid_list(path: str | Path) -> list[str]:
    """One wnid per line; blank lines and # comments skipped; order preserved."""
    wnids: list[str] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line not in seen:
                seen.add(line)
                wnids.append(line)
    return wnids
