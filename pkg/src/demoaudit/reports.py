"""CSV and Markdown rendering of audit tables.

Outputs are byte-deterministic: LF endings, fixed column orders, values
rounded half-up to two decimals at this layer only. Every file starts with
a provenance header (tool version, config hash, annotator versions) and
ends with the per-(image, synset) counting note.
"""

from __future__ import annotations

import csv
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Sequence

from .aggregate import SynsetRankRow, TopLevelTable
from .evaluate import StratifiedTable

__all__ = [
    "fmt_value",
    "provenance_lines",
    "write_csv",
    "write_markdown_table",
    "top_level_rows",
    "ranking_rows",
    "stratified_rows",
    "COUNTING_NOTE",
]

COUNTING_NOTE = "images appearing under multiple synsets are counted once per (image_id, synset) pair"

_COL_TITLES = {"male": "Male", "female": "Female", "all": "All"}


def fmt_value(value: Decimal | float | None) -> str:
    """Two-decimal half-up string, or n/a for empty cells."""
    if value is None:
        return "n/a"
    if isinstance(value, Decimal):
        quantized = value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    else:
        quantized = Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    return str(quantized)


def provenance_lines(tool_version: str, config_digest: str, annotator_versions: Sequence[str]) -> list[str]:
    annotators = ",".join(sorted(set(annotator_versions))) or "none"
    return [
        f"tool: demoaudit {tool_version}",
        f"config: sha256:{config_digest}",
        f"annotator: {annotators}",
    ]


def write_csv(
    path: str | Path,
    header: Sequence[str],
    rows: Iterable[Sequence[str]],
    comments: Sequence[str],
    footers: Sequence[str] = (),
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for comment in comments:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
        for footer in footers:
            fh.write(f"# {footer}\n")


def write_markdown_table(
    path: str | Path,
    header: Sequence[str],
    rows: Iterable[Sequence[str]],
    comments: Sequence[str],
    footers: Sequence[str] = (),
    title: str | None = None,
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("<!-- " + " | ".join(comments) + " -->\n\n")
        if title:
            fh.write(f"## {title}\n\n")
        fh.write("| " + " | ".join(header) + " |\n")
        fh.write("| " + " | ".join("---" if i == 0 else "---:" for i in range(len(header))) + " |\n")
        for row in rows:
            fh.write("| " + " | ".join(row) + " |\n")
        for footer in footers:
            fh.write(f"\n_{footer}_\n")


def top_level_rows(table: TopLevelTable) -> tuple[list[str], list[list[str]]]:
    header = ["age_group", "male", "female", "all"]
    rows = []
    for row_label in table.rows:
        rows.append(
            [row_label]
            + [fmt_value(table.cells[(row_label, col)]) for col in ("male", "female", "all")]
        )
    return header, rows


def ranking_rows(rows: Sequence[SynsetRankRow]) -> tuple[list[str], list[list[str]]]:
    header = ["wnid", "label", "pct_male", "pct_female", "n_faces"]
    rendered = [
        [r.wnid, r.label, fmt_value(r.pct_male), fmt_value(r.pct_female), str(r.n_faces)]
        for r in rows
    ]
    return header, rendered


def stratified_rows(table: StratifiedTable, row_title: str) -> tuple[list[str], list[list[str]]]:
    header = [row_title, "male", "female", "all"]
    rows = []
    for row_label in table.row_labels:
        rows.append(
            [row_label]
            + [fmt_value(table.value(row_label, col)) for col in ("male", "female", "all")]
        )
    return header, rows


def markdown_header(header: Sequence[str]) -> list[str]:
    return [_COL_TITLES.get(h, h.replace("_", " ").capitalize()) for h in header]
