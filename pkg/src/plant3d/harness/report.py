"""Accuracy tables in the six-row detector-descriptor layout, as CSV or markdown."""

import json
from dataclasses import dataclass, field

PAIRS = (
    ("harris", "shot"),
    ("iss", "shot"),
    ("sift", "shot"),
    ("harris", "sift"),
    ("iss", "sift"),
    ("sift", "sift"),
)
PAIR_LABELS = {
    "harris": "Harris", "iss": "ISS", "sift": "SIFT", "shot": "SHOT",
}
COLUMNS = (("fv", "condition"), ("fv", "stage"), ("vlad", "condition"), ("vlad", "stage"))
CSV_HEADER = "pair,fv_condition,fv_stage,vlad_condition,vlad_stage"
SKIPPED = "skipped"
NOT_RUN = "n/a"


def pair_label(detector, descriptor):
    return f"{PAIR_LABELS[detector]}-{PAIR_LABELS[descriptor]}"


_LABEL_TO_PAIR = {pair_label(*p): p for p in PAIRS}


@dataclass
class AccuracyTable:
    """Six rows (detector-descriptor pairs) by four (encoder, task) columns.

    ``cells`` maps ``(detector, descriptor, encoder, task)`` to a percentage,
    to :data:`SKIPPED`, or is absent when the cell was not requested.
    """

    cells: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def get(self, detector, descriptor, encoder, task):
        return self.cells.get((detector, descriptor, encoder, task))

    def __eq__(self, other):
        return (isinstance(other, AccuracyTable) and self.cells == other.cells
                and self.metadata == other.metadata)


def _fmt(value):
    if value is None:
        return NOT_RUN
    if value == SKIPPED:
        return SKIPPED
    return f"{value:.2f}"


def _row_values(table, pair):
    return [_fmt(table.get(*pair, enc, task)) for enc, task in COLUMNS]


def _metadata_lines(metadata):
    return [f"{key}: {json.dumps(metadata[key], sort_keys=True)}" for key in sorted(metadata)]


def emit_report(table, format="csv"):
    """Render ``table`` as CSV or markdown with metadata as trailing comments."""
    if format == "csv":
        lines = [CSV_HEADER]
        lines += [",".join([pair_label(*p)] + _row_values(table, p)) for p in PAIRS]
        lines += ["# " + m for m in _metadata_lines(table.metadata)]
    elif format == "markdown":
        lines = [
            "| Detector-Descriptor | Accuracy (FV) Condition | Accuracy (FV) Stage "
            "| Accuracy (VLAD) Condition | Accuracy (VLAD) Stage |",
            "|---|---:|---:|---:|---:|",
        ]
        lines += ["| " + " | ".join([pair_label(*p)] + _row_values(table, p)) + " |"
                  for p in PAIRS]
        lines.append("")
        lines += ["<!-- " + m + " -->" for m in _metadata_lines(table.metadata)]
    else:
        raise ValueError(f"unknown report format {format!r}")
    return "\n".join(lines) + "\n"


def _parse_cell(text):
    text = text.strip()
    if text == NOT_RUN:
        return None
    if text == SKIPPED:
        return SKIPPED
    return float(text)


def parse_report(text):
    """Inverse of ``emit_report(..., "csv")``."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != CSV_HEADER:
        raise ValueError("not an accuracy report: bad header")
    table = AccuracyTable()
    for line in lines[1:]:
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(": ")
            table.metadata[key] = json.loads(value)
            continue
        parts = line.split(",")
        if len(parts) != 5 or parts[0] not in _LABEL_TO_PAIR:
            raise ValueError(f"malformed report row {line!r}")
        pair = _LABEL_TO_PAIR[parts[0]]
        for (enc, task), raw in zip(COLUMNS, parts[1:]):
            value = _parse_cell(raw)
            if value is not None:
                table.cells[(*pair, enc, task)] = value
    return table
