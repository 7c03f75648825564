"""Loading, imputation, normalization, splitting and summaries of yearly tables.

A table has one row per year: ``year, feature_1, ..., feature_M, target``.
Missing cells are kept as NaN in :class:`RawTable` and must be imputed
before a :class:`Dataset` can be built.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateFeature,
    DuplicateYear,
    EmptyPartition,
    InsufficientNeighbors,
    InvalidParameter,
    IoError,
    MalformedCsv,
    MissingValue,
    NonNumericCell,
    SchemaMismatch,
    TooFewRows,
    UnimputableColumn,
)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RawTable:
    years: np.ndarray
    features: np.ndarray  # (n, M), NaN = missing
    target: np.ndarray  # (n,), NaN = missing
    feature_names: tuple[str, ...]
    target_name: str = "yield"

    def __post_init__(self):
        years = np.asarray(self.years, dtype=np.int64)
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 2 or feats.shape != (len(years), len(self.feature_names)):
            raise MalformedCsv("feature block does not match years x feature_names")
        if len(self.target) != len(years):
            raise MalformedCsv("target length does not match number of rows")
        if np.any(np.diff(years) <= 0):
            raise MalformedCsv("years must be strictly increasing")
        years = years.copy()
        years.setflags(write=False)
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "target", _frozen(self.target))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_rows(self) -> int:
        return len(self.years)

    def is_complete(self) -> bool:
        return not (np.isnan(self.features).any() or np.isnan(self.target).any())

    def columns(self) -> np.ndarray:
        """Features and target side by side, shape (n, M + 1)."""
        return np.column_stack([self.features, self.target])


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, M) normalized to [0, 1]
    target: np.ndarray  # (n,) raw units
    feature_names: tuple[str, ...]
    years: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        target = np.asarray(self.target, dtype=float)
        if feats.ndim != 2 or feats.shape[0] != target.shape[0]:
            raise InvalidParameter("features and target have different row counts")
        if feats.shape[1] != len(self.feature_names):
            raise InvalidParameter("feature_names does not match feature columns")
        if np.isnan(feats).any() or np.isnan(target).any():
            raise MissingValue("Dataset cannot hold missing values")
        years = np.asarray(self.years, dtype=np.int64).copy()
        years.setflags(write=False)
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "target", _frozen(target))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "years", years)

    @property
    def n_rows(self) -> int:
        return len(self.target)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.features[rows], self.target[rows], self.feature_names, self.years[rows])


@dataclass(frozen=True)
class NormalizationParams:
    feature_names: tuple[str, ...]
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "minimum", _frozen(self.minimum))
        object.__setattr__(self, "maximum", _frozen(self.maximum))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if np.any(self.maximum < self.minimum):
            raise InvalidParameter("max must be >= min for every feature")

    def apply(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        return (features - self.minimum) / (self.maximum - self.minimum)

    def invert(self, normalized) -> np.ndarray:
        normalized = np.asarray(normalized, dtype=float)
        return normalized * (self.maximum - self.minimum) + self.minimum

    def to_dict(self) -> dict:
        return {
            name: {"min": float(lo), "max": float(hi)}
            for name, lo, hi in zip(self.feature_names, self.minimum, self.maximum)
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationParams":
        names = tuple(d)
        return cls(names, [d[k]["min"] for k in names], [d[k]["max"] for k in names])


@dataclass(frozen=True)
class ColumnStats:
    mean: float
    std: float
    min: float
    max: float
    skewness: float


@dataclass(frozen=True)
class SummaryStats:
    columns: dict[str, ColumnStats] = field(default_factory=dict)

    def __getitem__(self, name: str) -> ColumnStats:
        return self.columns[name]


# --- CSV --------------------------------------------------------------------

def read_csv_rows(path) -> tuple[list[str], list[list[str]]]:
    """Read a UTF-8 comma-separated file: header row, then data rows.

    Lines starting with ``#`` are comments and skipped. Returns the header and
    the raw string cells; every data row must have as many cells as the header.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise IoError(f"no such file: {path}") from exc
    except (OSError, UnicodeDecodeError) as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise MalformedCsv(f"{path}: no header row")
    try:
        rows = list(csv.reader(lines, strict=True))
    except csv.Error as exc:
        raise MalformedCsv(f"{path}: {exc}") from exc
    header, body = [h.strip() for h in rows[0]], rows[1:]
    if len(set(header)) != len(header) or any(h == "" for h in header):
        raise MalformedCsv(f"{path}: header has empty or duplicate column names")
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise MalformedCsv(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
    return header, body


def _parse_cell(cell: str, where: str) -> float:
    cell = cell.strip()
    if cell == "":
        return math.nan
    try:
        value = float(cell)
    except ValueError:
        raise NonNumericCell(f"{where}: {cell!r} is not a number") from None
    if not math.isfinite(value):
        raise NonNumericCell(f"{where}: {cell!r} is not a finite number")
    return value


def parse_table(header: Sequence[str], body: Sequence[Sequence[str]], *, has_target: bool = True,
                min_rows: int = 2, source: str = "<table>") -> RawTable:
    if len(header) < (3 if has_target else 2):
        raise MalformedCsv(f"{source}: need year, at least one feature" + (", target" if has_target else ""))
    if len(body) < min_rows:
        raise TooFewRows(f"{source}: {len(body)} data rows, need at least {min_rows}")
    feature_names = list(header[1:-1] if has_target else header[1:])
    years, values = [], []
    for i, row in enumerate(body, start=2):
        year_cell = row[0].strip()
        try:
            year = int(year_cell)
        except ValueError:
            raise NonNumericCell(f"{source} row {i}: year {year_cell!r} is not an integer") from None
        years.append(year)
        values.append([_parse_cell(c, f"{source} row {i} col {j + 2}") for j, c in enumerate(row[1:])])
    if len(set(years)) != len(years):
        dup = sorted(y for y in set(years) if years.count(y) > 1)
        raise DuplicateYear(f"{source}: duplicate year(s) {dup}")
    order = np.argsort(years, kind="stable")
    years_arr = np.asarray(years, dtype=np.int64)[order]
    values_arr = np.asarray(values, dtype=float).reshape(len(years), -1)[order]
    if has_target:
        feats, target = values_arr[:, :-1], values_arr[:, -1]
        target_name = header[-1]
    else:
        feats, target = values_arr, np.full(len(years), np.nan)
        target_name = "yield"
    return RawTable(years_arr, feats, target, tuple(feature_names), target_name)


def load_csv(path) -> RawTable:
    """Read a yearly table; rows are re-sorted ascending by year."""
    header, body = read_csv_rows(path)
    return parse_table(header, body, has_target=True, source=str(path))


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_csv(path, table: RawTable) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", *table.feature_names, table.target_name])
        for year, feats, t in zip(table.years, table.features, table.target):
            w.writerow([int(year), *(_fmt(v) for v in feats), _fmt(t)])


# --- preprocessing ----------------------------------------------------------

def knn_impute(table: RawTable, k: int) -> RawTable:
    """Fill each missing cell with the mean of its column over the k nearest rows.

    Distances are Euclidean over the coordinates observed in both rows, each
    rescaled by its column range. Only rows where the column is observed are
    candidates; distance ties resolve by row order. Non-missing cells are
    never altered.
    """
    if k < 1:
        raise InvalidParameter("k must be >= 1")
    data = table.columns()
    names = [*table.feature_names, table.target_name]
    observed = ~np.isnan(data)
    for j, name in enumerate(names):
        if not observed[:, j].any():
            raise UnimputableColumn(f"column {name!r} has no observed values")
    if observed.all():
        return table
    if not observed.all(axis=1).any():
        raise UnimputableColumn("no fully observed row to anchor imputation")

    lo = np.nanmin(data, axis=0)
    span = np.nanmax(data, axis=0) - lo
    span[span == 0] = 1.0
    scaled = (data - lo) / span

    filled = data.copy()
    for r in np.flatnonzero(~observed.all(axis=1)):
        for j in np.flatnonzero(~observed[r]):
            candidates = np.flatnonzero(observed[:, j])
            candidates = candidates[candidates != r]
            if k > len(candidates):
                raise InsufficientNeighbors(
                    f"column {names[j]!r}: k={k} but only {len(candidates)} candidate rows"
                )
            diff = scaled[candidates] - scaled[r]
            mutual = observed[candidates] & observed[r]
            dist = np.sqrt((np.where(mutual, diff, 0.0) ** 2).sum(axis=1))
            dist[~mutual.any(axis=1)] = np.inf
            nearest = candidates[np.argsort(dist, kind="stable")[:k]]
            filled[r, j] = data[nearest, j].mean()

    return RawTable(table.years, filled[:, :-1], filled[:, -1], table.feature_names, table.target_name)


def min_max_normalize(table: RawTable) -> tuple[Dataset, NormalizationParams]:
    if not table.is_complete():
        raise MissingValue("table has missing cells; run knn_impute first")
    lo = table.features.min(axis=0)
    hi = table.features.max(axis=0)
    for name, a, b in zip(table.feature_names, lo, hi):
        if a == b:
            raise DegenerateFeature(name)
    params = NormalizationParams(table.feature_names, lo, hi)
    ds = Dataset(params.apply(table.features), table.target, table.feature_names, table.years)
    return ds, params


def normalize_with(table: RawTable, params: NormalizationParams) -> Dataset:
    """Normalize query rows with previously fitted params (values may leave [0, 1])."""
    if tuple(table.feature_names) != tuple(params.feature_names):
        raise SchemaMismatch(
            f"features {list(table.feature_names)} do not match {list(params.feature_names)}"
        )
    if np.isnan(table.features).any():
        raise MissingValue("query rows have missing feature values")
    target = np.where(np.isnan(table.target), 0.0, table.target)
    return Dataset(params.apply(table.features), target, table.feature_names, table.years)


def chronological_split(ds: Dataset, train_fraction: float) -> tuple[Dataset, Dataset]:
    """First ``ceil(n * train_fraction)`` years train, the rest test."""
    if not 0.0 < train_fraction < 1.0:
        raise InvalidParameter("train_fraction must lie in (0, 1)")
    n = ds.n_rows
    if n < 3:
        raise TooFewRows(f"need at least 3 rows to split, got {n}")
    n_train = math.ceil(n * train_fraction)
    if n_train <= 0 or n_train >= n:
        raise EmptyPartition(f"n={n}, fraction={train_fraction} leaves an empty partition")
    order = np.argsort(ds.years, kind="stable")
    return ds.take(order[:n_train]), ds.take(order[n_train:])


def describe(values) -> ColumnStats:
    """Mean, sample std, min, max and adjusted Fisher-Pearson skewness."""
    x = np.asarray(values, dtype=float)
    n = len(x)
    if n < 2:
        raise TooFewRows("need at least 2 values")
    mean = float(x.mean())
    dev = x - mean
    m2 = float(np.mean(dev**2))
    std = float(np.sqrt(np.sum(dev**2) / (n - 1)))
    if m2 == 0.0 or n < 3:
        skew = 0.0
    else:
        g1 = float(np.mean(dev**3)) / m2**1.5
        skew = g1 * math.sqrt(n * (n - 1)) / (n - 2)
    return ColumnStats(mean, std, float(x.min()), float(x.max()), skew)


def summary_stats(ds: Dataset, target_name: str = "yield") -> SummaryStats:
    if ds.n_rows < 2:
        raise TooFewRows("need at least 2 rows")
    cols = {name: describe(ds.features[:, j]) for j, name in enumerate(ds.feature_names)}
    cols[target_name] = describe(ds.target)
    return SummaryStats(cols)
