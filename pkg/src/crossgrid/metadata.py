"""Building description tables: loading, imputation, and numeric encoding.

A building is described by a handful of key-value attributes (occupants,
house type, construction-year class, bedrooms, appliance count, ...).
This module turns such tables into numeric matrices that the similarity
and selection code can compute distances on.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"
ORDERED = "ordered"
COLUMN_KINDS = (NUMERIC, CATEGORICAL, ORDERED)

#: cell spellings treated as a missing value in delimited files
MISSING_TOKENS = ("", "NA")


class MetadataError(ValueError):
    """Malformed description table, schema, or encoder misuse."""


def id_sort_key(building_id: str):
    """Canonical ordering for building ids: numeric when possible, else text."""
    s = str(building_id)
    return (0, int(s), "") if s.isdigit() else (1, 0, s)


@dataclass(frozen=True)
class ColumnSchema:
    """Ordered attribute columns, each tagged numeric / categorical / ordered."""

    columns: tuple[tuple[str, str], ...]

    def __post_init__(self):
        seen = set()
        for name, kind in self.columns:
            if kind not in COLUMN_KINDS:
                raise MetadataError(f"unknown column kind {kind!r} for {name!r}")
            if name in seen:
                raise MetadataError(f"duplicate column {name!r} in schema")
            seen.add(name)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.columns)

    def kind_of(self, name: str) -> str:
        for col, kind in self.columns:
            if col == name:
                return kind
        raise MetadataError(f"column {name!r} not in schema")

    @classmethod
    def from_file(cls, path: str | Path) -> "ColumnSchema":
        """Parse a flat ``name=kind`` text file (one column per line)."""
        path = Path(path)
        if not path.exists():
            raise MetadataError(f"schema file not found: {path}")
        cols = []
        for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise MetadataError(f"{path}:{lineno}: expected 'name=kind', got {raw!r}")
            name, kind = (part.strip() for part in line.split("=", 1))
            cols.append((name, kind))
        if not cols:
            raise MetadataError(f"schema file {path} declares no columns")
        return cls(tuple(cols))

    def to_file(self, path: str | Path) -> None:
        lines = [f"{name}={kind}" for name, kind in self.columns]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class BuildingDescription:
    """One building's contextual record; ``None`` marks a missing attribute."""

    building_id: str
    values: dict[str, float | str | None]

    def get(self, name: str):
        return self.values.get(name)


@dataclass(frozen=True)
class DescriptionTable:
    """Rows plus their schema; column order always follows the schema."""

    rows: tuple[BuildingDescription, ...]
    schema: ColumnSchema
    warning_count: int = 0

    def __post_init__(self):
        ids = [r.building_id for r in self.rows]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1}, key=id_sort_key)
            raise MetadataError(f"duplicate building_id: {', '.join(dupes)}")

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.building_id for r in self.rows)

    def column(self, name: str) -> list:
        return [r.values.get(name) for r in self.rows]

    def row_by_id(self, building_id: str) -> BuildingDescription:
        for r in self.rows:
            if r.building_id == building_id:
                return r
        raise MetadataError(f"unknown building_id {building_id!r}")

    def has_missing(self) -> bool:
        return any(v is None for r in self.rows for v in r.values.values())


@dataclass(frozen=True)
class EncodedMatrix:
    """Numeric matrix with rows aligned to building ids.

    ``notes`` records how the matrix was produced (encoding kind, scaling),
    so downstream results can report the exact pipeline used.
    """

    ids: tuple[str, ...]
    columns: tuple[str, ...]
    values: np.ndarray
    notes: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.ids), len(self.columns)):
            raise MetadataError(
                f"matrix shape {v.shape} does not match {len(self.ids)} ids x "
                f"{len(self.columns)} columns"
            )
        if v.size and not np.isfinite(v).all():
            raise MetadataError("encoded matrix contains non-finite entries")
        object.__setattr__(self, "values", v)

    def note(self, key: str) -> str | None:
        return dict(self.notes).get(key)


def _parse_cell(raw: str, kind: str):
    """Return (value, ok) for one cell; missing tokens map to (None, True)."""
    text = raw.strip()
    if text in MISSING_TOKENS:
        return None, True
    if kind == NUMERIC:
        try:
            return float(text), True
        except ValueError:
            return None, False
    return text, True


def load_descriptions(
    path: str | Path,
    schema: ColumnSchema,
    delimiter: str = ",",
    id_column: str = "building_id",
) -> DescriptionTable:
    """Read a delimited description table with a header row.

    Unparseable cells become missing marks and bump ``warning_count``.
    Values that violate basic sanity (occupants or size_bedrooms < 1,
    negative appliance_count) are treated the same way.
    """
    path = Path(path)
    if not path.exists():
        raise MetadataError(f"description file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise MetadataError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        expected = {id_column, *schema.names}
        if set(header) != expected:
            missing = sorted(expected - set(header))
            extra = sorted(set(header) - expected)
            raise MetadataError(
                f"{path}: header/schema mismatch"
                + (f"; missing columns: {missing}" if missing else "")
                + (f"; unknown columns: {extra}" if extra else "")
            )
        idx = {name: header.index(name) for name in header}

        rows = []
        warnings = 0
        for lineno, record in enumerate(reader, 2):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise MetadataError(
                    f"{path}:{lineno}: expected {len(header)} cells, got {len(record)}"
                )
            building_id = record[idx[id_column]].strip()
            if not building_id:
                raise MetadataError(f"{path}:{lineno}: blank building_id")
            values: dict[str, float | str | None] = {}
            for name, kind in schema.columns:
                value, ok = _parse_cell(record[idx[name]], kind)
                if not ok:
                    warnings += 1
                    value = None
                if value is not None and not _value_sane(name, value):
                    warnings += 1
                    value = None
                values[name] = value
            rows.append(BuildingDescription(building_id, values))

    if not rows:
        raise MetadataError(f"{path}: no buildings (empty data section)")
    return DescriptionTable(tuple(rows), schema, warning_count=warnings)


def _value_sane(name: str, value) -> bool:
    if name in ("occupants", "size_bedrooms") and isinstance(value, float):
        return value >= 1
    if name == "appliance_count" and isinstance(value, float):
        return value >= 0
    return True


def column_mode(values: list, kind: str):
    """Most frequent non-missing value; ties go to the smallest canonical value."""
    present = [v for v in values if v is not None]
    if not present:
        raise MetadataError("cannot take the mode of an entirely missing column")
    counts: dict = {}
    for v in present:
        counts[v] = counts.get(v, 0) + 1
    best = max(counts.values())
    candidates = [v for v, c in counts.items() if c == best]
    return min(candidates)  # numeric or lexicographic order, per column kind


def impute_most_frequent(table: DescriptionTable) -> DescriptionTable:
    """Replace every missing cell with its column's most frequent value."""
    if not table.has_missing():
        return table
    modes = {}
    for name, kind in table.schema.columns:
        col = table.column(name)
        if any(v is None for v in col):
            if all(v is None for v in col):
                raise MetadataError(f"column {name!r} is entirely missing; cannot impute")
            modes[name] = column_mode(col, kind)
    rows = []
    for r in table.rows:
        values = {
            name: (modes[name] if v is None and name in modes else v)
            for name, v in r.values.items()
        }
        rows.append(BuildingDescription(r.building_id, values))
    return DescriptionTable(tuple(rows), table.schema, table.warning_count)


def _require_complete(table: DescriptionTable, op: str) -> None:
    if table.has_missing():
        raise MetadataError(
            f"{op} requires a table without missing values; run impute_most_frequent first"
        )


def encode_labels(table: DescriptionTable) -> EncodedMatrix:
    """Integer-code categorical columns (codes follow sorted distinct values)."""
    _require_complete(table, "encode_labels")
    cols = []
    names = []
    for name, kind in table.schema.columns:
        col = table.column(name)
        if kind == NUMERIC:
            cols.append(np.array(col, dtype=float))
        else:
            codes = {v: i for i, v in enumerate(sorted(set(col)))}
            cols.append(np.array([codes[v] for v in col], dtype=float))
        names.append(name)
    values = np.column_stack(cols) if cols else np.zeros((len(table.rows), 0))
    return EncodedMatrix(table.ids, tuple(names), values, notes=(("encoding", "label"),))


def one_hot_encode(table: DescriptionTable) -> EncodedMatrix:
    """Expand each categorical column into one indicator column per value."""
    _require_complete(table, "one_hot_encode")
    cols = []
    names = []
    for name, kind in table.schema.columns:
        col = table.column(name)
        if kind == NUMERIC:
            cols.append(np.array(col, dtype=float))
            names.append(name)
        else:
            for value in sorted(set(col)):
                cols.append(np.array([1.0 if v == value else 0.0 for v in col]))
                names.append(f"{name}={value}")
    values = np.column_stack(cols) if cols else np.zeros((len(table.rows), 0))
    return EncodedMatrix(table.ids, tuple(names), values, notes=(("encoding", "onehot"),))


def minmax_scale_columns(m: EncodedMatrix) -> EncodedMatrix:
    """Scale each column to [0, 1]; constant columns map to 0.0."""
    if m.values.size == 0:
        raise MetadataError("cannot scale an empty matrix")
    lo = m.values.min(axis=0)
    hi = m.values.max(axis=0)
    span = hi - lo
    scaled = np.where(span > 0, (m.values - lo) / np.where(span > 0, span, 1.0), 0.0)
    return EncodedMatrix(m.ids, m.columns, scaled, notes=m.notes + (("scaled", "minmax"),))


@dataclass
class DescriptionEncoder:
    """Encoding pipeline fitted on a source table and reusable on new rows.

    Fit captures column modes (for imputing incoming descriptions), the
    categorical vocabularies, and per-column min/max, so a target building
    is encoded exactly the way the sources were.  With one-hot encoding a
    target value unseen among the sources simply leaves its indicator block
    all zero; with label encoding there is no usable code, so it errors.
    """

    encoding: str = "onehot"
    scale: bool = True
    schema: ColumnSchema | None = None
    modes: dict = field(default_factory=dict)
    vocab: dict = field(default_factory=dict)
    col_lo: np.ndarray | None = None
    col_hi: np.ndarray | None = None
    columns: tuple[str, ...] = ()

    def fit(self, table: DescriptionTable) -> "DescriptionEncoder":
        if self.encoding not in ("onehot", "label"):
            raise MetadataError(f"unknown encoding {self.encoding!r}")
        self.schema = table.schema
        complete = impute_most_frequent(table)
        for name, kind in table.schema.columns:
            col = complete.column(name)
            self.modes[name] = column_mode(col, kind)
            if kind != NUMERIC:
                self.vocab[name] = tuple(sorted(set(col)))
        encoded = (one_hot_encode if self.encoding == "onehot" else encode_labels)(complete)
        self.columns = encoded.columns
        self.col_lo = encoded.values.min(axis=0)
        self.col_hi = encoded.values.max(axis=0)
        return self

    def _check_fitted(self):
        if self.schema is None:
            raise MetadataError("encoder is not fitted")

    def transform_row(self, desc: BuildingDescription) -> np.ndarray:
        """Encode one description through the fitted pipeline."""
        self._check_fitted()
        unknown = sorted(set(desc.values) - set(self.schema.names))
        if unknown:
            raise MetadataError(f"unknown attributes: {', '.join(unknown)}")
        raw = []
        for name, kind in self.schema.columns:
            v = desc.values.get(name)
            if v is None:
                v = self.modes[name]
            if kind == NUMERIC:
                raw.append(float(v))
            elif self.encoding == "onehot":
                raw.extend(1.0 if v == known else 0.0 for known in self.vocab[name])
            else:
                if v not in self.vocab[name]:
                    raise MetadataError(
                        f"value {v!r} for {name!r} was not seen in the source table; "
                        "label encoding cannot place it (use the one-hot pipeline)"
                    )
                raw.append(float(self.vocab[name].index(v)))
        vec = np.array(raw, dtype=float)
        if self.scale:
            span = self.col_hi - self.col_lo
            vec = np.where(span > 0, (vec - self.col_lo) / np.where(span > 0, span, 1.0), 0.0)
        return vec

    def transform_table(self, table: DescriptionTable) -> EncodedMatrix:
        self._check_fitted()
        rows = np.vstack([self.transform_row(r) for r in table.rows])
        notes = (("encoding", self.encoding),)
        if self.scale:
            notes += (("scaled", "minmax"),)
        return EncodedMatrix(table.ids, self.columns, rows, notes=notes)
