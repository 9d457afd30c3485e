"""Manifest CSV loading, growth-stage labelling and stratified splits."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import (
    ClassTooSmallError,
    NotFoundError,
    ParseError,
    TooFewDaysError,
    UnknownConditionError,
)

CONDITIONS = ("control", "heat", "shade")
STAGES = ("stage1", "stage2", "stage3")
MANIFEST_COLUMNS = ("path", "species", "condition", "replicate", "day")


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    species: str
    condition: str
    replicate: int = 1
    day: int = 0

    def __post_init__(self):
        if not self.path:
            raise ValueError("manifest path must be non-empty")
        if self.condition not in CONDITIONS:
            raise UnknownConditionError(
                f"unknown condition {self.condition!r}; expected one of {CONDITIONS}")


def _int_field(row, name, lineno, minimum):
    raw = (row.get(name) or "").strip()
    try:
        value = int(raw)
    except ValueError:
        raise ParseError(f"{name} must be an integer, got {raw!r}", line=lineno, column=name) from None
    if value < minimum:
        raise ParseError(f"{name} must be >= {minimum}, got {value}", line=lineno, column=name)
    return value


def load_manifest(path):
    """Read ``path,species,condition,replicate,day`` rows.

    Relative cloud paths are resolved against the manifest's directory.

    Raises:
        NotFoundError: the manifest does not exist.
        ParseError: missing header column or malformed row (line and column
            are reported).
        UnknownConditionError: a condition outside control/heat/shade.
    """
    path = Path(path)
    if not path.is_file():
        raise NotFoundError(f"no such manifest: {path}")
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        for col in MANIFEST_COLUMNS:
            if col not in header:
                raise ParseError(f"manifest header lacks column {col!r}", line=1, column=col)
        reader.fieldnames = header
        for row in reader:
            lineno = reader.line_num
            if None in row or any(row.get(c) is None for c in MANIFEST_COLUMNS):
                raise ParseError("wrong number of fields", line=lineno)
            cloud = row["path"].strip()
            if not cloud:
                raise ParseError("empty path", line=lineno, column="path")
            condition = row["condition"].strip().lower()
            if condition not in CONDITIONS:
                raise UnknownConditionError(
                    f"line {lineno}: unknown condition {condition!r}; expected one of {CONDITIONS}")
            if not Path(cloud).is_absolute():
                cloud = str(path.parent / cloud)
            records.append(ManifestRecord(
                cloud, row["species"].strip(), condition,
                _int_field(row, "replicate", lineno, 1), _int_field(row, "day", lineno, 0)))
    return records


def assign_stages(records):
    """Label each record by its species' day tertile.

    Distinct days are sorted per species and cut into three groups by rank;
    when the count is not divisible by three the earlier stages get the
    extra days.

    Raises:
        TooFewDaysError: a species has fewer than three distinct days.
    """
    stage_of = {}
    for species in sorted({r.species for r in records}):
        days = sorted({r.day for r in records if r.species == species})
        if len(days) < 3:
            raise TooFewDaysError(
                f"species {species!r} has {len(days)} distinct day(s); need >= 3")
        base, extra = divmod(len(days), 3)
        start = 0
        for s, stage in enumerate(STAGES):
            size = base + (1 if s < extra else 0)
            for day in days[start:start + size]:
                stage_of[species, day] = stage
            start += size
    return [(r, stage_of[r.species, r.day]) for r in records]


def split(items, ratio=0.8, seed=42):
    """Stratified seeded train/test split of ``(item, label)`` pairs.

    Each class sends ``floor(ratio * n_c)`` items to training, clamped so
    both sides get at least one. Both outputs keep input order.

    Raises:
        ClassTooSmallError: a class has fewer than two items.
    """
    if not 0 < ratio < 1:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    items = list(items)
    rng = np.random.default_rng(seed)
    train_idx = []
    for label in sorted({lab for _, lab in items}):
        members = [i for i, (_, lab) in enumerate(items) if lab == label]
        n = len(members)
        if n < 2:
            raise ClassTooSmallError(f"class {label!r} has {n} item(s); need >= 2 to split")
        # the epsilon keeps e.g. 0.29 * 100 = 28.999... from flooring to 28
        n_train = min(max(int(np.floor(ratio * n + 1e-9)), 1), n - 1)
        perm = rng.permutation(n)
        train_idx.extend(members[j] for j in perm[:n_train])
    chosen = set(train_idx)
    train = [items[i] for i in range(len(items)) if i in chosen]
    test = [items[i] for i in range(len(items)) if i not in chosen]
    return train, test
