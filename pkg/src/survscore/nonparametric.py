"""Kaplan-Meier, Nelson-Aalen and log-rank primitives."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous piecewise-constant function of time."""

    knots: np.ndarray
    values: np.ndarray
    value_before_first_knot: float = 0.0

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.shape != values.shape or knots.ndim != 1:
            raise ValidationError("knots and values must be 1-d arrays of equal length")
        if knots.size > 1 and np.any(np.diff(knots) <= 0):
            raise ValidationError("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side="right") - 1
        vals = np.concatenate(([self.value_before_first_knot], self.values))
        out = vals[idx + 1]
        return float(out) if out.ndim == 0 else out

    def map(self, fn, value_before_first_knot=None) -> "StepFunction":
        before = fn(self.value_before_first_knot) if value_before_first_knot is None else value_before_first_knot
        return StepFunction(self.knots, fn(self.values), float(before))


@dataclass(frozen=True, eq=False)
class KMCurve:
    survival: StepFunction
    at_risk: np.ndarray
    events: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.survival.knots


@dataclass(frozen=True)
class LogRankResult:
    statistic: float
    p_value: float
    df: int


def _check(times, status):
    times = np.asarray(times, dtype=float)
    status = np.asarray(status)
    if times.ndim != 1 or times.size == 0:
        raise ValidationError("need at least one observation")
    if status.shape != times.shape:
        raise ValidationError("times and status must have equal length")
    return times, status.astype(bool)


def event_table(times, status):
    """Distinct event times with at-risk and event counts.

    Censored subjects are at risk at their own censoring time.
    """
    times, status = _check(times, status)
    event_times = np.unique(times[status])
    sorted_times = np.sort(times)
    at_risk = times.size - np.searchsorted(sorted_times, event_times, side="left")
    events = np.bincount(np.searchsorted(event_times, times[status]), minlength=event_times.size)
    return event_times, at_risk.astype(np.int64), events.astype(np.int64)


def km_fit(times, status) -> KMCurve:
    """Product-limit survival estimate; knots at distinct event times."""
    t, y, d = event_table(times, status)
    surv = np.cumprod(1.0 - d / y)
    return KMCurve(StepFunction(t, surv, 1.0), y, d)


def nelson_aalen(times, status) -> StepFunction:
    """Cumulative hazard: running sum of deaths / at risk."""
    t, y, d = event_table(times, status)
    return StepFunction(t, np.cumsum(d / y), 0.0)


def km_survival_at(curve: KMCurve, t) -> float:
    return curve.survival(t)


def km_percentile(curve: KMCurve, q: float):
    """Smallest event time at which survival has dropped to 1 - q or below.

    Returns None when the curve never gets that low (beyond follow-up).
    """
    if not 0.0 < q <= 1.0:
        raise ValidationError(f"percentile q must lie in (0, 1], got {q}")
    hit = np.flatnonzero(curve.survival.values <= 1.0 - q)
    return float(curve.times[hit[0]]) if hit.size else None


def write_km_csv(curve: KMCurve, path, header_comment: str | None = None) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "survival", "at_risk", "events"])
        for t, s, y, d in zip(curve.times, curve.survival.values, curve.at_risk, curve.events):
            w.writerow([repr(float(t)), repr(float(s)), int(y), int(d)])


def logrank_test(groups: Sequence[tuple]) -> LogRankResult:
    """k-sample log-rank test on ``[(times, status), ...]``.

    Uses observed minus expected events per group pooled over the distinct
    event times, with the hypergeometric covariance; chi-squared with k - 1
    degrees of freedom.
    """
    if len(groups) < 2:
        raise ValidationError("log-rank test needs at least two groups")
    ts, ss = [], []
    for g, (t, s) in enumerate(groups):
        t, s = _check(t, s)
        ts.append(t)
        ss.append(s)
    all_t = np.concatenate(ts)
    all_s = np.concatenate(ss)
    if not all_s.any():
        raise ValidationError("log-rank test needs at least one event")
    event_times = np.unique(all_t[all_s])
    k = len(groups)
    y = np.empty((k, event_times.size))
    d = np.empty((k, event_times.size))
    for g in range(k):
        srt = np.sort(ts[g])
        y[g] = srt.size - np.searchsorted(srt, event_times, side="left")
        d[g] = np.bincount(np.searchsorted(event_times, ts[g][ss[g]]), minlength=event_times.size)
    y_tot = y.sum(axis=0)
    d_tot = d.sum(axis=0)
    expected = (d_tot * y / y_tot).sum(axis=1)
    o_minus_e = d.sum(axis=1) - expected

    # hypergeometric covariance; a single subject at risk carries no variance
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(y_tot > 1, d_tot * (y_tot - d_tot) / (y_tot**2 * (y_tot - 1)), 0.0)
    cov = np.diag((scale * y * y_tot).sum(axis=1)) - (scale * y) @ y.T
    u = o_minus_e[:-1]
    v = cov[:-1, :-1]
    if k == 2:
        stat = float(u[0] ** 2 / v[0, 0]) if v[0, 0] > 0 else 0.0
    else:
        stat = float(u @ np.linalg.pinv(v) @ u)
    stat = max(stat, 0.0)
    return LogRankResult(stat, float(stats.chi2.sf(stat, k - 1)), k - 1)
