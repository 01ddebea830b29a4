"""Survival datasets: CSV loading, validation, summaries and resampling.

A :class:`Dataset` is an immutable column store of follow-up times, event
indicators and two covariate blocks: ``x`` (survival-model covariates) and
``z`` (class-membership covariates). The two blocks may overlap or differ.
All resampling primitives are pure functions of ``(dataset, seed)`` and are
bit-reproducible (see :mod:`lcsurv.rng`).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    EmptyFile,
    EventNotBinary,
    KTooLarge,
    MissingColumn,
    NegativeTime,
    NoEvents,
    NonNumericCell,
)
from .rng import generator


@dataclass(frozen=True)
class SurvivalRecord:
    """One subject: follow-up time, event indicator and covariates.

    ``event`` is 1 when death was observed, 0 when censored. ``x`` and ``z``
    are the survival-model and class-membership covariate vectors.
    """

    id: str
    time: float
    event: int
    x: tuple[float, ...]
    z: tuple[float, ...]


@dataclass(frozen=True)
class ColumnSchema:
    """Role mapping from CSV columns to dataset fields.

    ``x`` and ``z`` name covariate columns; a column may appear in both.
    """

    time: str = "time"
    event: str = "event"
    x: tuple[str, ...] = ()
    z: tuple[str, ...] = ()
    id: str | None = None

    def covariate_columns(self) -> tuple[str, ...]:
        seen: list[str] = []
        for name in (*self.x, *self.z):
            if name not in seen:
                seen.append(name)
        return tuple(seen)


class Dataset:
    """Immutable collection of survival records in fixed order.

    Arrays returned by the properties are read-only views; treat a Dataset
    as frozen after construction. Record order is preserved from the input
    so seeded operations are reproducible.
    """

    def __init__(
        self,
        times: np.ndarray,
        events: np.ndarray,
        x: np.ndarray,
        z: np.ndarray,
        x_names: Sequence[str],
        z_names: Sequence[str],
        ids: Sequence[str] | None = None,
    ):
        times = np.asarray(times, dtype=float)
        events = np.asarray(events, dtype=int)
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        n = times.shape[0]
        if x.ndim != 2 or z.ndim != 2 or x.shape[0] != n or z.shape[0] != n:
            raise ValueError("covariate blocks must be 2-d with one row per record")
        if events.shape[0] != n:
            raise ValueError("times and events must have equal length")
        if x.shape[1] != len(x_names) or z.shape[1] != len(z_names):
            raise ValueError("covariate names must match block widths")
        if not np.all(np.isfinite(times)) or np.any(times < 0):
            raise NegativeTime("follow-up times must be finite and non-negative")
        if not np.all(np.isin(events, (0, 1))):
            raise EventNotBinary("event indicators must be 0 or 1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            raise NonNumericCell("covariates must be finite")
        self._times = times
        self._events = events
        self._x = x
        self._z = z
        self.x_names = tuple(x_names)
        self.z_names = tuple(z_names)
        self.ids = tuple(str(i) for i in ids) if ids is not None else tuple(
            str(i) for i in range(n)
        )
        if len(self.ids) != n:
            raise ValueError("ids must have one entry per record")
        for arr in (self._times, self._events, self._x, self._z):
            arr.flags.writeable = False
        self._cox_prep = None  # lazily filled by lcsurv.coxph

    # -- basic accessors ----------------------------------------------------

    @property
    def n(self) -> int:
        return self._times.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def times(self) -> np.ndarray:
        return self._times

    @property
    def events(self) -> np.ndarray:
        return self._events

    @property
    def x(self) -> np.ndarray:
        return self._x

    @property
    def z(self) -> np.ndarray:
        return self._z

    @property
    def n_events(self) -> int:
        return int(self._events.sum())

    @property
    def records(self) -> tuple[SurvivalRecord, ...]:
        return tuple(self.record(i) for i in range(self.n))

    def record(self, i: int) -> SurvivalRecord:
        return SurvivalRecord(
            id=self.ids[i],
            time=float(self._times[i]),
            event=int(self._events[i]),
            x=tuple(self._x[i]),
            z=tuple(self._z[i]),
        )

    @classmethod
    def from_records(
        cls,
        records: Sequence[SurvivalRecord],
        x_names: Sequence[str],
        z_names: Sequence[str],
    ) -> "Dataset":
        if not records:
            raise EmptyFile("no records")
        ds = cls(
            times=np.array([r.time for r in records]),
            events=np.array([r.event for r in records]),
            x=np.array([r.x for r in records]).reshape(len(records), len(x_names)),
            z=np.array([r.z for r in records]).reshape(len(records), len(z_names)),
            x_names=x_names,
            z_names=z_names,
            ids=[r.id for r in records],
        )
        if ds.n_events == 0:
            raise NoEvents("dataset contains no observed events")
        return ds

    # -- derived datasets -----------------------------------------------------

    def subset(self, indices: np.ndarray) -> "Dataset":
        """Dataset restricted to ``indices`` (kept in the given order).

        Resampled subsets may contain zero events; estimation on such a
        subset fails with ``NoEvents`` at fit time.
        """
        idx = np.asarray(indices)
        return Dataset(
            times=self._times[idx],
            events=self._events[idx],
            x=self._x[idx],
            z=self._z[idx],
            x_names=self.x_names,
            z_names=self.z_names,
            ids=[self.ids[int(i)] for i in idx],
        )

    def to_csv(self, path: str | Path) -> None:
        """Write the dataset with a header row; covariates appear once each."""
        cols = []
        for name in (*self.x_names, *self.z_names):
            if name not in cols:
                cols.append(name)
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "time", "event", *cols])
            for i in range(self.n):
                values = []
                for name in cols:
                    if name in self.x_names:
                        values.append(self._x[i, self.x_names.index(name)])
                    else:
                        values.append(self._z[i, self.z_names.index(name)])
                writer.writerow(
                    [self.ids[i], repr(float(self._times[i])), int(self._events[i])]
                    + [repr(float(v)) for v in values]
                )


@dataclass(frozen=True)
class FoldAssignment:
    """Disjoint assignment of record indices to ``k`` folds of near-equal size."""

    k: int
    fold_of: np.ndarray

    def __post_init__(self):
        self.fold_of.flags.writeable = False

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.k)


# -- loading ---------------------------------------------------------------


def _parse_cell(raw: str, line: int, column: str) -> float:
    text = raw.strip()
    if not text:
        raise NonNumericCell(f"line {line}, column '{column}': empty cell")
    try:
        return float(text)
    except ValueError:
        raise NonNumericCell(f"line {line}, column '{column}': cannot parse '{raw}'") from None


def load_csv(path: str | Path, schema: ColumnSchema) -> Dataset:
    """Load a survival dataset from a headed CSV file.

    Decimal parsing is locale-independent (dot decimal separator). Line
    numbers in error messages are 1-based file lines, header included.
    Missing covariate cells are a hard error; imputation is out of scope.

    Raises
    ------
    MissingColumn, NonNumericCell, NegativeTime, EventNotBinary, EmptyFile
        On the first violation encountered, naming the offending
        line/column.
    """
    covariates = schema.covariate_columns()
    if not covariates:
        raise MissingColumn("schema must name at least one covariate column")
    path = Path(path)
    with path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        needed = [schema.time, schema.event, *covariates]
        if schema.id is not None:
            needed.append(schema.id)
        for name in needed:
            if name not in header:
                raise MissingColumn(f"{path}: missing column '{name}'")
        col = {name: header.index(name) for name in needed}

        ids: list[str] = []
        times: list[float] = []
        events: list[int] = []
        rows: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise NonNumericCell(
                    f"line {line_no}: expected {len(header)} cells, found {len(row)}"
                )
            t = _parse_cell(row[col[schema.time]], line_no, schema.time)
            if t < 0:
                raise NegativeTime(f"line {line_no}: negative time {t}")
            e = _parse_cell(row[col[schema.event]], line_no, schema.event)
            if e not in (0.0, 1.0):
                raise EventNotBinary(f"line {line_no}: event value '{row[col[schema.event]].strip()}' is not 0/1")
            values = [_parse_cell(row[col[c]], line_no, c) for c in covariates]
            ids.append(row[col[schema.id]] if schema.id is not None else str(line_no - 2))
            times.append(t)
            events.append(int(e))
            rows.append(values)

    if not rows:
        raise EmptyFile(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    x = data[:, [covariates.index(c) for c in schema.x]] if schema.x else np.empty((len(rows), 0))
    z = data[:, [covariates.index(c) for c in schema.z]] if schema.z else np.empty((len(rows), 0))
    ds = Dataset(
        times=np.asarray(times),
        events=np.asarray(events),
        x=x,
        z=z,
        x_names=schema.x,
        z_names=schema.z,
        ids=ids,
    )
    if ds.n_events == 0:
        raise NoEvents(f"{path}: no observed events")
    return ds


# -- summaries ---------------------------------------------------------------


@dataclass(frozen=True)
class VariableSummary:
    name: str
    kind: str  # "continuous" | "binary"
    mean: float | None = None
    sd: float | None = None
    median: float | None = None
    iqr: tuple[float, float] | None = None
    count: int | None = None
    percent: float | None = None


@dataclass(frozen=True)
class DatasetSummary:
    n: int
    time_median: float
    time_iqr: tuple[float, float]
    deaths: int
    death_percent: float
    covariates: tuple[VariableSummary, ...] = field(default_factory=tuple)

    def as_dict(self) -> dict:
        rows = {}
        for v in self.covariates:
            if v.kind == "binary":
                rows[v.name] = {"kind": v.kind, "count": v.count, "percent": v.percent}
            else:
                rows[v.name] = {
                    "kind": v.kind,
                    "mean": v.mean,
                    "sd": v.sd,
                    "median": v.median,
                    "iqr": list(v.iqr),
                }
        return {
            "n": self.n,
            "time": {"median": self.time_median, "iqr": list(self.time_iqr)},
            "deaths": {"count": self.deaths, "percent": self.death_percent},
            "covariates": rows,
        }


def _quantile(values: np.ndarray, q: float) -> float:
    # Type-7 rule: linear interpolation between order statistics
    # (numpy's default), stated in the CLI help.
    return float(np.quantile(values, q))


def _sd(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def summarize(ds: Dataset) -> DatasetSummary:
    """Per-variable summary: mean (SD) and median (IQR) for continuous
    covariates, n (%) for binary ones, median (IQR) for follow-up time and
    n (%) for deaths.

    A covariate is treated as binary when every value is 0 or 1. Covariates
    shared between the x and z blocks are summarized once.
    """
    if ds.n == 0:
        raise EmptyFile("cannot summarize an empty dataset")
    summaries: list[VariableSummary] = []
    seen: list[str] = []
    for names, block in ((ds.x_names, ds.x), (ds.z_names, ds.z)):
        for j, name in enumerate(names):
            if name in seen:
                continue
            seen.append(name)
            values = block[:, j]
            if np.all(np.isin(values, (0.0, 1.0))):
                count = int(values.sum())
                summaries.append(
                    VariableSummary(
                        name=name,
                        kind="binary",
                        count=count,
                        percent=100.0 * count / ds.n,
                    )
                )
            else:
                summaries.append(
                    VariableSummary(
                        name=name,
                        kind="continuous",
                        mean=float(values.mean()),
                        sd=_sd(values),
                        median=_quantile(values, 0.5),
                        iqr=(_quantile(values, 0.25), _quantile(values, 0.75)),
                    )
                )
    deaths = ds.n_events
    return DatasetSummary(
        n=ds.n,
        time_median=_quantile(ds.times, 0.5),
        time_iqr=(_quantile(ds.times, 0.25), _quantile(ds.times, 0.75)),
        deaths=deaths,
        death_percent=100.0 * deaths / ds.n,
        covariates=tuple(summaries),
    )


# -- resampling ---------------------------------------------------------------


def kfold_split(ds: Dataset, k: int, seed: int) -> FoldAssignment:
    """Assign records to ``k`` folds: seeded uniform permutation, then
    round-robin. Fold sizes differ by at most one; the result is a pure
    function of ``(record order, k, seed)``.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > ds.n:
        raise KTooLarge(f"k={k} exceeds dataset size {ds.n}")
    perm = generator(seed, "kfold", 0).permutation(ds.n)
    fold_of = np.empty(ds.n, dtype=int)
    fold_of[perm] = np.arange(ds.n) % k
    return FoldAssignment(k=k, fold_of=fold_of)


def bootstrap_sample(ds: Dataset, seed: int) -> Dataset:
    """Draw ``n`` records with replacement (seeded, deterministic)."""
    if ds.n == 0:
        raise EmptyFile("cannot resample an empty dataset")
    idx = generator(seed, "bootstrap", 0).integers(0, ds.n, size=ds.n)
    return ds.subset(idx)
