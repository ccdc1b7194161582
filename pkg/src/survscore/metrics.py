"""Discrimination metrics for censored data: C-index, cumulative/dynamic AUC(t), iAUC.

Scores are risk-oriented by default (larger score, earlier expected event).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import SurvScoreError, UndefinedMetricError, ValidationError
from .nonparametric import km_fit

log = logging.getLogger(__name__)

HIGHER_IS_RISKIER = "higher_is_riskier"
HIGHER_IS_SAFER = "higher_is_safer"
ORIENTATIONS = (HIGHER_IS_RISKIER, HIGHER_IS_SAFER)
TIE_POLICIES = {"paper": 0.0, "harrell": 0.5}


def _arrays(scores, times, status):
    scores = np.asarray(scores, dtype=float)
    times = np.asarray(times, dtype=float)
    status = np.asarray(status).astype(np.int64)
    if not (scores.shape == times.shape == status.shape) or scores.ndim != 1:
        raise ValidationError("scores, times and status must be 1-d arrays of equal length")
    return scores, times, status


def _orient(orientation):
    if orientation not in ORIENTATIONS:
        raise ValidationError(f"orientation must be one of {ORIENTATIONS}")
    return orientation == HIGHER_IS_SAFER


@numba.njit(cache=True, nogil=True)
def _concordance_counts(risk_rank, n_ranks, times, status):
    """Pair counts in O(n log n): sweep times downward, Fenwick tree over risk ranks."""
    n = times.shape[0]
    order = np.argsort(-times, kind="mergesort")
    tree = np.zeros(n_ranks + 1, dtype=np.int64)
    conc = 0
    disc = 0
    tied = 0
    inserted = 0
    i = 0
    while i < n:
        j = i
        while j < n and times[order[j]] == times[order[i]]:
            j += 1
        # rows i..j-1 share a time; compare their events with strictly later rows
        for q in range(i, j):
            r = order[q]
            if status[r] == 0:
                continue
            k = risk_rank[r]  # 1-based
            below = 0
            pos = k - 1
            while pos > 0:
                below += tree[pos]
                pos -= pos & (-pos)
            upto = 0
            pos = k
            while pos > 0:
                upto += tree[pos]
                pos -= pos & (-pos)
            conc += below
            tied += upto - below
            disc += inserted - upto
        for q in range(i, j):
            pos = risk_rank[order[q]]
            while pos <= n_ranks:
                tree[pos] += 1
                pos += pos & (-pos)
            inserted += 1
        i = j
    return conc, disc, tied


def concordance_counts(risk, times, status):
    """(concordant, discordant, tied-prediction, eligible) pair counts.

    A pair is eligible when the shorter observed time is an event and the two
    times differ; it is concordant when the shorter time has the larger risk.
    """
    risk, times, status = _arrays(risk, times, status)
    uniq, inv = np.unique(risk, return_inverse=True)
    conc, disc, tied = _concordance_counts(inv.astype(np.int64) + 1, uniq.size, times, status)
    return conc, disc, tied, conc + disc + tied


def c_index(scores, times, status, orientation=HIGHER_IS_RISKIER, tie_policy="paper") -> float:
    """Fraction of eligible pairs ordered correctly by ``scores``.

    Prediction ties count 0 under ``tie_policy="paper"`` and 1/2 under
    ``"harrell"``. For ``higher_is_safer`` the value is computed as the
    complement of the risk-oriented discordance, so flipping the orientation
    of tie-free scores returns exactly ``1 - c``.
    """
    flip = _orient(orientation)
    if tie_policy not in TIE_POLICIES:
        raise ValidationError(f"tie_policy must be one of {tuple(TIE_POLICIES)}")
    w = TIE_POLICIES[tie_policy]
    conc, disc, tied, pairs = concordance_counts(scores, times, status)
    if pairs == 0:
        raise UndefinedMetricError("no eligible pairs for the C-index")
    if flip:
        return 1.0 - (conc + (1.0 - w) * tied) / pairs
    return (conc + w * tied) / pairs


def _auc_curve(scores, times, status, eval_times):
    """Cumulative/dynamic AUC at each of ``eval_times``; nan where undefined.

    Thresholds run over the distinct scores. For the group scoring above a
    threshold, sensitivity is P(score > c) (1 - S_c(t)) / (1 - S(t)), and
    specificity uses the complementary group, with every S a Kaplan-Meier
    estimate. Values are clipped to [0, 1]; ROC points are sorted by false
    positive rate before trapezoidal integration.
    """
    eval_times = np.atleast_1d(np.asarray(eval_times, dtype=float))
    out = np.full(eval_times.size, np.nan)
    n = scores.size
    event_times = np.unique(times[status == 1])
    if event_times.size == 0:
        return out
    # distinct scores in decreasing order; group 0 is the highest score
    uniq, inv = np.unique(-scores, return_inverse=True)
    g = uniq.size
    rank = np.searchsorted(event_times, times, side="right")
    y = np.zeros((g, event_times.size + 1))
    np.add.at(y, (inv, rank), 1.0)
    y = np.cumsum(y[:, ::-1], axis=1)[:, ::-1][:, 1:]  # at risk at each event time
    d = np.zeros((g, event_times.size))
    ev = status == 1
    np.add.at(d, (inv[ev], rank[ev] - 1), 1.0)
    y_top = np.vstack([np.zeros(event_times.size), np.cumsum(y, axis=0)])  # first j groups
    d_top = np.vstack([np.zeros(event_times.size), np.cumsum(d, axis=0)])
    y_all, d_all = y_top[-1], d_top[-1]
    y_bot, d_bot = y_all - y_top, d_all - d_top

    def km_path(yy, dd):
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(yy > 0, 1.0 - dd / yy, 1.0)
        return np.cumprod(f, axis=-1)

    s_all = km_path(y_all, d_all)
    s_top = km_path(y_top, d_top)
    s_bot = km_path(y_bot, d_bot)
    n_top = np.concatenate(([0], np.cumsum(np.bincount(inv, minlength=g))))
    p_top = n_top / n

    for i, t in enumerate(eval_times):
        k = np.searchsorted(event_times, t, side="right") - 1
        if k < 0 or not np.any(times > t):
            continue
        s = s_all[k]
        if s <= 0.0 or s >= 1.0:
            continue
        sens = np.clip(p_top * (1.0 - s_top[:, k]) / (1.0 - s), 0.0, 1.0)
        spec = np.clip((1.0 - p_top) * s_bot[:, k] / s, 0.0, 1.0)
        fpr = 1.0 - spec
        # sort on a rounded key: 1 - spec carries float noise that would
        # otherwise reorder points sharing the same false positive rate
        order = np.lexsort((sens, np.round(fpr, 10)))
        out[i] = float(np.trapezoid(sens[order], fpr[order]))
    return out


def auc_at(scores, times, status, t, orientation=HIGHER_IS_RISKIER) -> float:
    scores, times, status = _arrays(scores, times, status)
    flip = _orient(orientation)
    if not np.any((times <= t) & (status == 1)):
        raise UndefinedMetricError(f"AUC({t}) undefined: no events by t")
    if not np.any(times > t):
        raise UndefinedMetricError(f"AUC({t}) undefined: nobody event-free beyond t")
    val = _auc_curve(scores, times, status, [t])[0]
    if np.isnan(val):
        raise UndefinedMetricError(f"AUC({t}) undefined: marginal survival at t is 0 or 1")
    # the KM-based estimator is not symmetric under negating scores when
    # censored, so the safer orientation reflects the risk-oriented ROC
    return 1.0 - val if flip else val


@dataclass(frozen=True)
class IAUCResult:
    value: float
    times: np.ndarray
    aucs: np.ndarray
    weights: np.ndarray  # renormalized, over the included times only


def iauc_details(scores, times, status, horizon=None, orientation=HIGHER_IS_RISKIER) -> IAUCResult:
    """KM-weighted mean of AUC(t) over distinct event times up to ``horizon``.

    The weight of event time t_k is the Kaplan-Meier drop S(t_{k-1}) - S(t_k).
    Times where AUC is undefined are dropped and the remaining weights are
    rescaled to sum to one.
    """
    scores, times, status = _arrays(scores, times, status)
    flip = _orient(orientation)
    km = km_fit(times, status)
    if horizon is None:
        horizon = float(km.times[-1]) if km.times.size else 0.0
    keep = km.times <= horizon
    ts = km.times[keep]
    surv = km.survival.values[keep]
    w = np.concatenate(([1.0], surv[:-1])) - surv
    aucs = _auc_curve(scores, times, status, ts)
    if flip:
        aucs = 1.0 - aucs
    ok = ~np.isnan(aucs) & (w > 0)
    if not ok.any():
        raise UndefinedMetricError(f"iAUC undefined: no event time up to {horizon} has a defined AUC")
    wk = w[ok] / w[ok].sum()
    return IAUCResult(float(np.dot(wk, aucs[ok])), ts[ok], aucs[ok], wk)


def iauc(scores, times, status, horizon=None, orientation=HIGHER_IS_RISKIER) -> float:
    return iauc_details(scores, times, status, horizon, orientation).value


@dataclass
class BootstrapCI:
    lower: float
    upper: float
    n_failed: int = 0
    replicates: np.ndarray = field(default=None, repr=False)

    def __iter__(self):
        return iter((self.lower, self.upper))


def bootstrap_ci(metric, data, B=100, level=0.95, seed=0) -> BootstrapCI:
    """Percentile interval of ``metric(*resampled arrays)`` over B resamples.

    ``data`` is a tuple of equal-length arrays resampled jointly by row.
    Replicate b draws from its own child of ``SeedSequence(seed)``.
    Replicates raising a library error are skipped; more than half failing
    is an error.
    """
    if B < 2:
        raise ValidationError("bootstrap needs B >= 2")
    if not 0.0 < level < 1.0:
        raise ValidationError("level must lie in (0, 1)")
    arrays = [np.asarray(a) for a in data]
    n = arrays[0].shape[0]
    values = []
    failed = 0
    for child in np.random.SeedSequence(seed).spawn(B):
        idx = np.random.default_rng(child).integers(0, n, size=n)
        try:
            values.append(float(metric(*(a[idx] for a in arrays))))
        except SurvScoreError:
            failed += 1
    if failed > B / 2:
        raise UndefinedMetricError(f"bootstrap: {failed} of {B} resamples failed")
    if failed > B / 10:
        log.warning("bootstrap: %d of %d resamples failed and were skipped", failed, B)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(values, [100 * alpha, 100 * (1 - alpha)])
    return BootstrapCI(float(lo), float(hi), failed, np.array(values))


@dataclass
class Estimate:
    estimate: float | None
    lower: float | None = None
    upper: float | None = None
    n_failed: int = 0

    def to_dict(self):
        return {"estimate": self.estimate, "lower": self.lower, "upper": self.upper,
                "bootstrap_failures": self.n_failed}


@dataclass
class MetricsReport:
    c_index: Estimate
    iauc: Estimate
    auc_at: dict
    horizon: float
    n: int
    n_events: int
    m: int | None = None

    def to_dict(self):
        return {
            "m": self.m,
            "n": self.n,
            "n_events": self.n_events,
            "horizon": self.horizon,
            "iauc": self.iauc.to_dict(),
            "c_index": self.c_index.to_dict(),
            "auc_at": {repr(float(t)): e.to_dict() for t, e in self.auc_at.items()},
        }


def _estimate(fn, arrays, B, level, seed):
    try:
        point = float(fn(*arrays))
    except UndefinedMetricError as exc:
        log.warning("%s", exc)
        return Estimate(None)
    try:
        ci = bootstrap_ci(fn, arrays, B, level, seed)
    except UndefinedMetricError as exc:
        log.warning("%s", exc)
        return Estimate(point)
    return Estimate(point, ci.lower, ci.upper, ci.n_failed)


def evaluate(scores, times, status, eval_times=(), horizon=None, B=100, level=0.95, seed=0,
             orientation=HIGHER_IS_RISKIER, tie_policy="paper", m=None) -> MetricsReport:
    """Point estimates and bootstrap percentile intervals for every metric.

    Every metric is bootstrapped over the same B resamples.
    """
    arrays = _arrays(scores, times, status)
    if horizon is None:
        ev = arrays[1][arrays[2] == 1]
        if ev.size == 0:
            raise UndefinedMetricError("evaluation data has no events")
        horizon = float(ev.max())
    ci = _estimate(lambda s, t, d: c_index(s, t, d, orientation, tie_policy), arrays, B, level, seed)
    ia = _estimate(lambda s, t, d: iauc(s, t, d, horizon, orientation), arrays, B, level, seed)
    aucs = {float(t): _estimate(lambda s, tt, d, t=t: auc_at(s, tt, d, t, orientation), arrays, B, level, seed)
            for t in eval_times}
    return MetricsReport(ci, ia, aucs, float(horizon), int(arrays[0].size), int(arrays[2].sum()), m)
