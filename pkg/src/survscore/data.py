"""Right-censored survival datasets: loading, validation, splitting, summaries."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataIOError, SchemaError, SplitError, ValidationError

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
KINDS = (CONTINUOUS, CATEGORICAL)

MISSING_POLICIES = ("reject", "impute")


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Observed times, event indicators and named covariate columns.

    Continuous columns are float arrays; categorical columns are object
    arrays of strings. ``row_ids`` index rows of the file the data came from
    and survive subsetting.
    """

    times: np.ndarray
    status: np.ndarray
    covariates: dict[str, np.ndarray]
    schema: dict[str, str]
    row_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        status = np.asarray(self.status)
        n = times.shape[0]
        if times.ndim != 1 or n < 1:
            raise ValidationError("dataset needs at least one row")
        if not np.all(np.isfinite(times)) or np.any(times < 0):
            bad = np.flatnonzero(~np.isfinite(times) | (times < 0))
            raise ValidationError(f"times must be finite and >= 0 (rows {bad[:10].tolist()})")
        if status.shape != (n,) or not np.all((status == 0) | (status == 1)):
            raise ValidationError("status must be 0/1 with one entry per row")
        covariates = {}
        for name, kind in self.schema.items():
            if kind not in KINDS:
                raise SchemaError(f"column {name!r}: unknown kind {kind!r}")
            if name not in self.covariates:
                raise SchemaError(f"column {name!r} declared but missing")
            col = np.asarray(self.covariates[name], dtype=float if kind == CONTINUOUS else object)
            if col.shape != (n,):
                raise ValidationError(f"column {name!r} has {col.shape[0]} entries, expected {n}")
            if kind == CONTINUOUS and not np.all(np.isfinite(col)):
                raise ValidationError(f"column {name!r} contains non-finite values")
            if kind == CATEGORICAL:
                col = np.array([str(v) for v in col], dtype=object)
            covariates[name] = col
        row_ids = np.arange(n) if self.row_ids is None else np.asarray(self.row_ids, dtype=np.int64)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "status", status.astype(np.int8))
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "schema", dict(self.schema))
        object.__setattr__(self, "row_ids", row_ids)
        for arr in (self.times, self.status, self.row_ids, *covariates.values()):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.times.shape[0]

    @property
    def n_events(self) -> int:
        return int(self.status.sum())

    @property
    def names(self) -> list[str]:
        return list(self.schema)

    def labels(self, name: str) -> list[str]:
        """Sorted label set of a categorical column."""
        if self.schema[name] != CATEGORICAL:
            raise SchemaError(f"column {name!r} is not categorical")
        return sorted(set(self.covariates[name]))

    def subset(self, idx) -> "SurvivalDataset":
        idx = np.asarray(idx)
        return SurvivalDataset(
            times=self.times[idx],
            status=self.status[idx],
            covariates={k: v[idx] for k, v in self.covariates.items()},
            schema=self.schema,
            row_ids=self.row_ids[idx],
        )

    def select(self, names: Sequence[str]) -> "SurvivalDataset":
        missing = [v for v in names if v not in self.schema]
        if missing:
            raise SchemaError(f"unknown variables: {missing}")
        return SurvivalDataset(
            times=self.times,
            status=self.status,
            covariates={k: self.covariates[k] for k in names},
            schema={k: self.schema[k] for k in names},
            row_ids=self.row_ids,
        )

    def row(self, i: int) -> dict:
        return {k: v[i] for k, v in self.covariates.items()}

    def fingerprint(self) -> str:
        """sha256 over times, status and covariates, in column order."""
        h = hashlib.sha256()
        h.update(self.times.tobytes())
        h.update(self.status.tobytes())
        for name, col in self.covariates.items():
            h.update(name.encode())
            if self.schema[name] == CONTINUOUS:
                h.update(col.tobytes())
            else:
                h.update("\x1f".join(col).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0

    def __post_init__(self):
        r = tuple(float(x) for x in self.ratios)
        if len(r) != 3 or any(not 0.0 <= x <= 1.0 for x in r):
            raise ValidationError(f"split ratios must be three values in [0, 1], got {self.ratios}")
        if abs(sum(r) - 1.0) > 1e-9:
            raise ValidationError(f"split ratios must sum to 1, got {sum(r)}")
        if int(self.seed) < 0:
            raise ValidationError("split seed must be non-negative")
        object.__setattr__(self, "ratios", r)


@dataclass(frozen=True)
class CohortSummary:
    n: int
    n_events: int
    n_censored: int
    event_fraction: float
    median_survival_among_events: float | None


def _parse_time(raw: str, line: int) -> float:
    try:
        t = float(raw)
    except ValueError:
        raise ValidationError(f"row {line}: time {raw!r} is not a number") from None
    if not math.isfinite(t) or t < 0:
        raise ValidationError(f"row {line}: time {raw!r} must be finite and >= 0")
    return t


def _parse_status(raw: str, line: int) -> int:
    try:
        s = float(raw)
    except ValueError:
        s = None
    if s not in (0.0, 1.0):
        raise ValidationError(f"row {line}: status {raw!r} is not 0 or 1")
    return int(s)


def load_dataset(
    path,
    time_col: str,
    status_col: str,
    schema: Mapping[str, str],
    missing_policy: str = "reject",
) -> SurvivalDataset:
    """Read a UTF-8 CSV with a header row into a validated dataset.

    Rows are numbered from 0 in error messages (the first data row is row 0).
    Columns absent from ``schema`` are ignored. With ``missing_policy="impute"``
    empty covariate cells are filled with the column median (continuous) or
    mode (categorical); missing times or statuses are always rejected.
    """
    if missing_policy not in MISSING_POLICIES:
        raise ValidationError(f"missing_policy must be one of {MISSING_POLICIES}")
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise SchemaError(f"{path}: empty file, header row required")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    for col in (time_col, status_col, *schema):
        if col not in header:
            raise SchemaError(f"{path}: column {col!r} not in header")
    pos = {h: i for i, h in enumerate(header)}

    times, status = [], []
    raw_cols: dict[str, list] = {name: [] for name in schema}
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise ValidationError(f"row {i}: expected {len(header)} fields, got {len(r)}")
        times.append(_parse_time(r[pos[time_col]].strip(), i))
        status.append(_parse_status(r[pos[status_col]].strip(), i))
        for name, kind in schema.items():
            cell = r[pos[name]].strip()
            if cell == "":
                if missing_policy == "reject":
                    raise ValidationError(f"row {i}: missing value in column {name!r}")
                raw_cols[name].append(None)
            elif kind == CONTINUOUS:
                try:
                    v = float(cell)
                except ValueError:
                    raise ValidationError(f"row {i}: column {name!r} value {cell!r} is not a number") from None
                if not math.isfinite(v):
                    raise ValidationError(f"row {i}: column {name!r} value {cell!r} is not finite")
                raw_cols[name].append(v)
            else:
                raw_cols[name].append(cell)
    if not body:
        raise ValidationError(f"{path}: no data rows")

    covariates = {}
    for name, kind in schema.items():
        vals = raw_cols[name]
        present = [v for v in vals if v is not None]
        if len(present) < len(vals):
            if not present:
                raise ValidationError(f"column {name!r}: every value missing, cannot impute")
            if kind == CONTINUOUS:
                fill = float(np.median(present))
            else:
                labels, counts = np.unique(np.array(present, dtype=object), return_counts=True)
                fill = labels[int(np.argmax(counts))]
            vals = [fill if v is None else v for v in vals]
        covariates[name] = np.array(vals, dtype=float if kind == CONTINUOUS else object)
    return SurvivalDataset(np.array(times), np.array(status), covariates, dict(schema))


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_dataset(ds: SurvivalDataset, path, time_col: str = "time", status_col: str = "status") -> None:
    """Write ``ds`` as CSV; floats use shortest round-trip repr."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([time_col, status_col, *ds.names])
        for i in range(ds.n):
            w.writerow([_fmt(ds.times[i]), int(ds.status[i]), *(_fmt(ds.covariates[k][i]) for k in ds.names)])


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    n_val = int(math.floor(ratios[1] * n + 1e-9))
    n_test = int(math.floor(ratios[2] * n + 1e-9))
    return n - n_val - n_test, n_val, n_test


def split_dataset(ds: SurvivalDataset, spec: SplitSpec):
    """Shuffle rows with ``spec.seed`` and cut train/validation/test blocks.

    Block sizes are floor(ratio * n); the rounding remainder goes to train.
    Each block keeps the original row order.
    """
    sizes = split_sizes(ds.n, spec.ratios)
    perm = np.random.default_rng(spec.seed).permutation(ds.n)
    bounds = np.cumsum((0,) + sizes)
    parts = []
    for name, lo, hi in zip(("train", "validation", "test"), bounds[:-1], bounds[1:]):
        idx = np.sort(perm[lo:hi])
        if idx.size == 0:
            raise SplitError(f"{name} partition would be empty (n={ds.n}, ratios={spec.ratios})")
        if ds.status[idx].sum() == 0:
            raise SplitError(f"{name} partition would contain zero events")
        parts.append(ds.subset(idx))
    return tuple(parts)


def summarize(ds: SurvivalDataset) -> CohortSummary:
    n_events = ds.n_events
    event_times = ds.times[ds.status == 1]
    return CohortSummary(
        n=ds.n,
        n_events=n_events,
        n_censored=ds.n - n_events,
        event_fraction=n_events / ds.n,
        median_survival_among_events=float(np.median(event_times)) if n_events else None,
    )
