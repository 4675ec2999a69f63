"""Panel dataset, indicator schema, fraud labels, and CSV I/O.

A panel is a set of (company, year) rows over a fixed feature list. Features
are organized by a three-level indicator schema whose canonical left-to-right
column order is Financial, then ESG, then InternalControl, with level-2 groups
contiguous inside each level-1 block.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

LEVEL1_GROUPS = ("Financial", "ESG", "InternalControl")
FEATURE_KINDS = ("Continuous", "Categorical")

#: Violation codes that mark a (company, year) as fraudulent.
FRAUD_CODES = frozenset({"P2501", "P2502", "P2503", "P2506"})


class DataError(ValueError):
    """Raised for malformed panel, schema, or violation inputs."""


@dataclass(frozen=True)
class SchemaEntry:
    feature_id: str
    level1: str
    level2: str
    kind: str
    order: int

    def __post_init__(self) -> None:
        if self.level1 not in LEVEL1_GROUPS:
            raise DataError(f"unknown level1 group {self.level1!r}")
        if self.kind not in FEATURE_KINDS:
            raise DataError(f"unknown feature kind {self.kind!r}")


@dataclass(frozen=True)
class FraudLabel:
    """Binary fraud label with the violation codes that produced it."""

    is_fraud: bool
    codes: frozenset = frozenset()

    def __post_init__(self) -> None:
        if self.is_fraud != bool(self.codes):
            raise DataError("is_fraud must equal (codes nonempty)")

    @classmethod
    def from_codes(cls, codes) -> "FraudLabel":
        recognized = frozenset(codes) & FRAUD_CODES
        return cls(is_fraud=bool(recognized), codes=recognized)


NOT_FRAUD = FraudLabel(False)


@dataclass(frozen=True)
class IndicatorSchema:
    """Feature hierarchy with a canonical column order.

    ``entries`` are stored in their original (file or construction) order;
    each entry carries its canonical ``order`` position. A schema is valid
    when the order values are a permutation of 0..F-1, level-1 blocks follow
    Financial -> ESG -> InternalControl, and level-2 groups are contiguous
    within their level-1 block.
    """

    entries: tuple

    def __post_init__(self) -> None:
        self.validate()

    @property
    def n_features(self) -> int:
        return len(self.entries)

    def validate(self) -> None:
        orders = sorted(e.order for e in self.entries)
        if orders != list(range(len(self.entries))):
            raise DataError("schema order values are not a permutation of 0..F-1")
        ids = [e.feature_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate feature_id in schema")
        ranked = self.ordered_entries()
        rank = {g: i for i, g in enumerate(LEVEL1_GROUPS)}
        l1 = [rank[e.level1] for e in ranked]
        if l1 != sorted(l1):
            raise DataError("canonical order must run Financial, ESG, InternalControl")
        seen: list = []
        for e in ranked:
            key = (e.level1, e.level2)
            if seen and seen[-1] == key:
                continue
            if key in seen:
                raise DataError(f"level2 group {key} is not contiguous in canonical order")
            seen.append(key)

    def ordered_entries(self) -> list:
        """Entries sorted into canonical column order."""
        return sorted(self.entries, key=lambda e: e.order)

    def ordered_feature_ids(self) -> list:
        return [e.feature_id for e in self.ordered_entries()]

    def level2_ranges(self) -> list:
        """(level1, level2, start, stop) canonical column ranges, in order."""
        out = []
        for pos, e in enumerate(self.ordered_entries()):
            if out and out[-1][0] == e.level1 and out[-1][1] == e.level2:
                out[-1] = (e.level1, e.level2, out[-1][2], pos + 1)
            else:
                out.append((e.level1, e.level2, pos, pos + 1))
        return out

    @classmethod
    def from_rows(cls, rows) -> "IndicatorSchema":
        """Build a schema from (feature_id, level1, level2, kind) rows.

        Rows may arrive in any level-1 order; the canonical order is the
        stable sort by level-1 rank (see :func:`ordered_columns`).
        """
        perm = _order_permutation(rows)
        order_of = {src: pos for pos, src in enumerate(perm)}
        entries = tuple(
            SchemaEntry(fid, l1, l2, kind, order_of[i])
            for i, (fid, l1, l2, kind) in enumerate(rows)
        )
        return cls(entries)


def _order_permutation(rows) -> list:
    rank = {g: i for i, g in enumerate(LEVEL1_GROUPS)}
    for _, l1, _, _ in rows:
        if l1 not in rank:
            raise DataError(f"unknown level1 group {l1!r}")
    return sorted(range(len(rows)), key=lambda i: (rank[rows[i][1]], i))


def ordered_columns(schema: IndicatorSchema) -> list:
    """Canonical column permutation: entry indices in Financial -> ESG ->
    InternalControl order, stable within each level-1 block.

    Returns a list ``perm`` where ``perm[j]`` is the index (into
    ``schema.entries``) of the feature occupying canonical column ``j``.
    """
    rows = [(e.feature_id, e.level1, e.level2, e.kind) for e in schema.entries]
    perm = _order_permutation(rows)
    seen: list = []
    for i in perm:
        key = (schema.entries[i].level1, schema.entries[i].level2)
        if seen and seen[-1] == key:
            continue
        if key in seen:
            raise DataError(f"level2 group {key} violates contiguity")
        seen.append(key)
    return perm


@dataclass
class PanelDataset:
    """(company, year)-keyed feature matrix with missingness mask and labels.

    ``keys`` is sorted by (company_id, year) and aligned row-wise with
    ``values`` and ``missing``. Cell values behind a True mask entry are
    meaningless (stored as 0). Instances are treated as immutable; the
    feature-engineering stages return new datasets.
    """

    keys: list
    values: np.ndarray
    missing: np.ndarray
    labels: dict
    schema: IndicatorSchema
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.missing = np.asarray(self.missing, dtype=bool)
        if self.values.shape != self.missing.shape:
            raise DataError("values and missing must have identical shape")
        if self.values.shape != (len(self.keys), self.schema.n_features):
            raise DataError("values shape does not match keys x schema")
        if len(set(self.keys)) != len(self.keys):
            raise DataError("duplicate (company, year) key")
        if self.keys != sorted(self.keys):
            raise DataError("keys must be sorted by (company, year)")
        for key in self.labels:
            if key not in set(self.keys):
                raise DataError(f"label for unknown key {key}")
        self._index = {k: i for i, k in enumerate(self.keys)}

    @property
    def n_rows(self) -> int:
        return len(self.keys)

    @property
    def companies(self) -> list:
        seen = dict.fromkeys(c for c, _ in self.keys)
        return list(seen)

    @property
    def years(self) -> list:
        return sorted({y for _, y in self.keys})

    def row_index(self, company: str, year: int) -> int:
        return self._index[(company, year)]

    def label_for(self, company: str, year: int) -> FraudLabel:
        return self.labels.get((company, year), NOT_FRAUD)

    def company_rows(self, company: str) -> list:
        return [i for i, (c, _) in enumerate(self.keys) if c == company]

    def fraud_mask(self) -> np.ndarray:
        """Boolean per-row mask of fraud-labelled rows."""
        return np.array(
            [self.labels.get(k, NOT_FRAUD).is_fraud for k in self.keys], dtype=bool
        )

    def with_labels(self, label_map: dict) -> "PanelDataset":
        """New dataset whose labels are replaced by ``label_map`` entries
        matching existing rows; rows absent from the map become non-fraud."""
        merged = {k: v for k, v in label_map.items() if k in self._index and v.is_fraud}
        return PanelDataset(self.keys, self.values.copy(), self.missing.copy(), merged, self.schema)

    def replace(self, *, keys=None, values=None, missing=None, labels=None, schema=None) -> "PanelDataset":
        keys = list(self.keys) if keys is None else keys
        values = self.values.copy() if values is None else values
        missing = self.missing.copy() if missing is None else missing
        if labels is None:
            keyset = set(keys)
            labels = {k: v for k, v in self.labels.items() if k in keyset}
        schema = self.schema if schema is None else schema
        return PanelDataset(keys, values, missing, labels, schema)


def load_schema_csv(path) -> IndicatorSchema:
    """Read a schema CSV with header feature_id,level1,level2,kind."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["feature_id", "level1", "level2", "kind"]:
            raise DataError(f"bad schema header {header!r}")
        for rec in reader:
            if len(rec) != 4:
                raise DataError(f"bad schema row {rec!r}")
            rows.append(tuple(rec))
    if not rows:
        raise DataError("schema file lists no features")
    return IndicatorSchema.from_rows(rows)


def load_panel_csv(path, schema_path) -> PanelDataset:
    """Load a panel CSV against its schema.

    The CSV header must be company_id,year,<feature_id>... where the feature
    columns are exactly the schema's features (any order). Empty cells become
    masked entries. Rows are sorted by (company, year); duplicates are errors.
    """
    schema = load_schema_csv(schema_path)
    ordered_ids = schema.ordered_feature_ids()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["company_id", "year"]:
            raise DataError("panel header must start with company_id,year")
        file_cols = header[2:]
        unknown = set(file_cols) - set(ordered_ids)
        if unknown:
            raise DataError(f"unknown feature column(s): {sorted(unknown)}")
        missing_cols = set(ordered_ids) - set(file_cols)
        if missing_cols:
            raise DataError(f"panel is missing schema column(s): {sorted(missing_cols)}")
        # map canonical column j -> position in this file's row
        col_pos = [file_cols.index(fid) for fid in ordered_ids]
        kind_by_id = {e.feature_id: e.kind for e in schema.entries}
        kinds = [kind_by_id[fid] for fid in ordered_ids]

        records = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise DataError(f"line {lineno}: expected {len(header)} cells")
            company = rec[0]
            try:
                year = int(rec[1])
            except ValueError as exc:
                raise DataError(f"line {lineno}: bad year {rec[1]!r}") from exc
            cells = rec[2:]
            vals = np.zeros(len(ordered_ids))
            mask = np.zeros(len(ordered_ids), dtype=bool)
            for j, pos in enumerate(col_pos):
                cell = cells[pos]
                if cell == "":
                    mask[j] = True
                    continue
                try:
                    vals[j] = float(cell)
                except ValueError as exc:
                    raise DataError(
                        f"line {lineno}: non-numeric value {cell!r} in "
                        f"{kinds[j].lower()} column {ordered_ids[j]!r}"
                    ) from exc
            records.append(((company, year), vals, mask))

    records.sort(key=lambda r: r[0])
    keys = [r[0] for r in records]
    if len(set(keys)) != len(keys):
        dupes = sorted({k for k in keys if keys.count(k) > 1})
        raise DataError(f"duplicate key {dupes[0]}")
    if not records:
        raise DataError("panel has no rows")
    values = np.stack([r[1] for r in records])
    missing = np.stack([r[2] for r in records])
    return PanelDataset(keys, values, missing, {}, schema)


def write_panel_csv(ds: PanelDataset, path) -> None:
    """Write a panel CSV in canonical column order; masked cells are empty."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["company_id", "year", *ds.schema.ordered_feature_ids()])
        for i, (company, year) in enumerate(ds.keys):
            cells = [
                "" if ds.missing[i, j] else _format_cell(ds.values[i, j])
                for j in range(ds.values.shape[1])
            ]
            writer.writerow([company, str(year), *cells])


def write_schema_csv(schema: IndicatorSchema, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature_id", "level1", "level2", "kind"])
        for e in schema.ordered_entries():
            writer.writerow([e.feature_id, e.level1, e.level2, e.kind])


def _format_cell(v: float) -> str:
    return repr(float(v))


def load_violations_csv(path) -> list:
    """Read violation records company_id,year,code."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["company_id", "year", "code"]:
            raise DataError(f"bad violations header {header!r}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != 3:
                raise DataError(f"line {lineno}: bad violation row")
            out.append((rec[0], int(rec[1]), rec[2]))
    return out


def derive_labels(violations) -> tuple:
    """Turn violation records into fraud labels.

    Only the four fraud codes count; records with other codes are skipped
    and returned for reporting. Result order is insensitive to input order.

    Returns:
        (labels, skipped): labels maps (company, year) -> FraudLabel with at
        least one recognized code; skipped lists the ignored records.
    """
    by_key: dict = {}
    skipped = []
    for company, year, code in violations:
        if code not in FRAUD_CODES:
            skipped.append((company, year, code))
            continue
        by_key.setdefault((company, year), set()).add(code)
    labels = {k: FraudLabel.from_codes(v) for k, v in sorted(by_key.items())}
    return labels, skipped


def write_violations_csv(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["company_id", "year", "code"])
        for company, year, code in records:
            writer.writerow([company, str(year), code])
