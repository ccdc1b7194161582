"""Cox proportional hazards on categorical covariates.

Breslow partial likelihood, damped Newton with step halving, Breslow
baseline cumulative hazard.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, NumericalError, ValidationError
from .nonparametric import StepFunction

GRAD_TOL = 1e-8
REL_LOGLIK_TOL = 1e-10
MAX_ITER = 100
MAX_ABS_BETA = 20.0


@dataclass(frozen=True, eq=False)
class CategoricalDesign:
    """Survival outcome plus categorical covariates given as integer codes.

    ``categories[v]`` lists the display labels of variable ``v``; code ``k``
    in ``codes[v]`` refers to ``categories[v][k]``.
    """

    times: np.ndarray
    status: np.ndarray
    codes: dict
    categories: dict

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "status", np.asarray(self.status).astype(np.int64))
        codes = {v: np.asarray(c, dtype=np.int64) for v, c in self.codes.items()}
        for v, c in codes.items():
            if c.shape != self.times.shape:
                raise ValidationError(f"variable {v!r}: codes length does not match times")
            if c.size and (c.min() < 0 or c.max() >= len(self.categories[v])):
                raise ValidationError(f"variable {v!r}: code out of range")
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "categories", {v: tuple(self.categories[v]) for v in codes})

    @property
    def variables(self):
        return list(self.codes)

    def subset(self, idx) -> "CategoricalDesign":
        return CategoricalDesign(self.times[idx], self.status[idx],
                                 {v: c[idx] for v, c in self.codes.items()}, self.categories)


@dataclass(frozen=True)
class Encoding:
    variable: str
    categories: tuple
    reference: int


def _encodings(design: CategoricalDesign, reference_map) -> list:
    reference_map = reference_map or {}
    out = []
    for v in design.variables:
        ref = int(reference_map.get(v, 0))
        if not 0 <= ref < len(design.categories[v]):
            raise ValidationError(f"variable {v!r}: reference index {ref} out of range")
        out.append(Encoding(v, design.categories[v], ref))
    return out


def design_matrix(codes: dict, encodings) -> tuple[np.ndarray, list]:
    """Dummy columns, one per non-reference category, in encoding order."""
    cols, names = [], []
    n = len(next(iter(codes.values()))) if codes else 0
    for enc in encodings:
        c = codes[enc.variable]
        for k in range(len(enc.categories)):
            if k != enc.reference:
                cols.append((c == k).astype(float))
                names.append((enc.variable, k))
    return (np.column_stack(cols) if cols else np.empty((n, 0))), names


class _RiskSets:
    """Sorting and tie bookkeeping shared by every likelihood evaluation."""

    def __init__(self, times, status):
        self.order = np.argsort(-times, kind="stable")
        t = times[self.order]
        s = status[self.order]
        # last position (in descending order) of each distinct time level
        uniq, first = np.unique(-t, return_index=True)
        last = np.concatenate((first[1:], [t.size])) - 1
        d = np.add.reduceat(s, first)
        has_event = d > 0
        self.end = last[has_event]  # risk set = positions 0..end
        self.d = d[has_event].astype(float)
        self.event_times = -uniq[has_event]
        self.status = s
        # cumulative index: for each row, event levels whose time <= its own time
        level_of_row = np.repeat(np.arange(first.size), np.diff(np.concatenate((first, [t.size]))))
        ev_level_pos = np.cumsum(has_event)  # number of event levels at or before (descending)
        self.n_levels_at_or_after = ev_level_pos[-1] - ev_level_pos[level_of_row] + has_event[level_of_row]


def _loglik_parts(beta, x, rs: _RiskSets, need_hess=True):
    xs = x[rs.order]
    lp = xs @ beta
    shift = lp.max() if lp.size else 0.0
    e = np.exp(lp - shift)
    s0 = np.cumsum(e)[rs.end]
    ll = float(np.dot(rs.status, lp) - np.dot(rs.d, np.log(s0) + shift))
    if not need_hess:
        return ll, None, None
    s1 = np.cumsum(e[:, None] * xs, axis=0)[rs.end]
    grad = rs.status @ xs - (rs.d / s0) @ s1
    # sum_k d_k/S0_k * S2_k = X' diag(e * A) X, A_j = sum of d_k/S0_k over event levels k with t_k <= t_j
    inc = rs.d / s0
    a = np.concatenate(([0.0], np.cumsum(inc[::-1])))[rs.n_levels_at_or_after]
    hess = -(xs.T * (e * a)) @ xs + (s1.T * (rs.d / s0**2)) @ s1
    return ll, grad, hess


def partial_loglik(beta, x, times, status) -> float:
    """Breslow log partial likelihood of linear predictor ``x @ beta``."""
    x = np.asarray(x, dtype=float).reshape(len(times), -1)
    rs = _RiskSets(np.asarray(times, dtype=float), np.asarray(status).astype(np.int64))
    return _loglik_parts(np.asarray(beta, dtype=float), x, rs, need_hess=False)[0]


def partial_loglik_derivatives(beta, x, times, status):
    """(log-likelihood, gradient, Hessian) at ``beta``."""
    x = np.asarray(x, dtype=float).reshape(len(times), -1)
    rs = _RiskSets(np.asarray(times, dtype=float), np.asarray(status).astype(np.int64))
    return _loglik_parts(np.asarray(beta, dtype=float), x, rs)


def breslow_cumhaz(times, status, lp) -> StepFunction:
    """Breslow baseline cumulative hazard; reduces to Nelson-Aalen when lp = 0."""
    times = np.asarray(times, dtype=float)
    status = np.asarray(status).astype(np.int64)
    rs = _RiskSets(times, status)
    s0 = np.cumsum(np.exp(np.asarray(lp, dtype=float)[rs.order]))[rs.end]
    # event levels are in descending time order
    return StepFunction(rs.event_times[::-1], np.cumsum((rs.d / s0)[::-1]), 0.0)


@dataclass(frozen=True, eq=False)
class CoxModel:
    encoding: list
    beta: np.ndarray
    columns: list
    std_err: np.ndarray
    baseline_cumhaz: StepFunction
    loglik: float
    iterations: int
    converged: bool
    gradient: np.ndarray = field(repr=False, default=None)

    @property
    def coefficients(self) -> dict:
        """Per variable, one coefficient per category with the reference at 0."""
        out = {enc.variable: np.zeros(len(enc.categories)) for enc in self.encoding}
        for (v, k), b in zip(self.columns, self.beta):
            out[v][k] = b
        return out

    def linear_predictor(self, codes: dict) -> np.ndarray:
        coefs = self.coefficients
        total = None
        for enc in self.encoding:
            c = np.asarray(codes[enc.variable], dtype=np.int64)
            term = coefs[enc.variable][c]
            total = term if total is None else total + term
        return total

    def to_dict(self) -> dict:
        return {
            "encoding": [{"variable": e.variable, "categories": list(e.categories), "reference": e.reference}
                         for e in self.encoding],
            "coefficients": {v: c.tolist() for v, c in self.coefficients.items()},
            "std_err": [float(s) for s in self.std_err],
            "baseline": {"times": self.baseline_cumhaz.knots.tolist(),
                         "cumhaz": self.baseline_cumhaz.values.tolist()},
            "loglik": self.loglik,
            "iterations": self.iterations,
            "converged": self.converged,
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))


def newton_maximize(x, times, status, max_iter=MAX_ITER, labels=None):
    """Maximize the Breslow partial likelihood from beta = 0.

    Converges when the gradient max-norm reaches GRAD_TOL, or when the
    relative log-likelihood change drops below REL_LOGLIK_TOL with a
    negligible step. Raises ConvergenceError if a coefficient exceeds
    MAX_ABS_BETA in magnitude (monotone likelihood) or on iteration cap.
    """
    rs = _RiskSets(times, status)
    p = x.shape[1]
    beta = np.zeros(p)
    ll, grad, hess = _loglik_parts(beta, x, rs)
    for it in range(1, max_iter + 1):
        if p == 0 or np.max(np.abs(grad)) <= GRAD_TOL:
            return beta, ll, grad, hess, it - 1, True
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            raise NumericalError("singular information matrix") from None
        new_ll = -np.inf
        for _ in range(40):
            cand = beta + step
            new_ll = _loglik_parts(cand, x, rs, need_hess=False)[0]
            if np.isfinite(new_ll) and new_ll >= ll - 1e-12 * abs(ll):
                break
            step = step / 2.0
        beta = cand
        if np.any(np.abs(beta) > MAX_ABS_BETA):
            j = int(np.argmax(np.abs(beta)))
            name = labels[j] if labels else f"column {j}"
            raise ConvergenceError(f"monotone likelihood: coefficient for {name} diverges (|beta| > {MAX_ABS_BETA:g})")
        small = abs(new_ll - ll) <= REL_LOGLIK_TOL * max(abs(ll), 1.0) and np.max(np.abs(step)) <= 1e-6
        ll, grad, hess = _loglik_parts(beta, x, rs)
        if small:
            return beta, ll, grad, hess, it, True
    if np.max(np.abs(grad)) <= GRAD_TOL:
        return beta, ll, grad, hess, max_iter, True
    raise ConvergenceError(f"Newton iteration did not converge in {max_iter} iterations")


def fit_cox(design: CategoricalDesign, reference_map=None) -> CoxModel:
    """Fit a Cox model with one dummy per non-reference category.

    ``reference_map`` maps variable name to the index of its reference
    category (default 0 for every variable).
    """
    if design.status.sum() == 0:
        raise NumericalError("Cox fit needs at least one event")
    encoding = _encodings(design, reference_map)
    x, columns = design_matrix(design.codes, encoding)
    labels = [f"{v!r} category {design.categories[v][k]!r}" for v, k in columns]
    for j in range(x.shape[1]):
        if not x[:, j].any():
            raise ValidationError(f"{labels[j]} has no rows")
    if x.shape[1] and np.linalg.matrix_rank(x) < x.shape[1]:
        raise ValidationError("design matrix has collinear columns")
    beta, ll, grad, hess, iters, ok = newton_maximize(x, design.times, design.status, labels=labels)
    try:
        se = np.sqrt(np.diag(np.linalg.inv(-hess))) if x.shape[1] else np.empty(0)
    except np.linalg.LinAlgError:
        se = np.full(x.shape[1], np.nan)
    base = breslow_cumhaz(design.times, design.status, x @ beta)
    return CoxModel(encoding, beta, columns, se, base, ll, iters, ok, grad)


def baseline_survival(model: CoxModel) -> StepFunction:
    """S0(t) = exp(-H0(t)) for the all-reference covariate pattern."""
    h = model.baseline_cumhaz
    return StepFunction(h.knots, np.exp(-h.values), 1.0)


def predict_survival(model: CoxModel, x: dict, t) -> float:
    """S(t | x) = S0(t) ** exp(lp(x)); ``x`` maps variable to category label or code."""
    codes = {}
    for enc in model.encoding:
        if enc.variable not in x:
            raise ValidationError(f"missing variable {enc.variable!r}")
        val = x[enc.variable]
        if isinstance(val, (int, np.integer)) and not isinstance(val, bool):
            k = int(val)
            if not 0 <= k < len(enc.categories):
                raise ValidationError(f"variable {enc.variable!r}: category code {k} out of range")
        else:
            try:
                k = enc.categories.index(val)
            except ValueError:
                raise ValidationError(f"variable {enc.variable!r}: unseen category {val!r}") from None
        codes[enc.variable] = np.array([k])
    lp = float(model.linear_predictor(codes)[0]) if codes else 0.0
    return float(baseline_survival(model)(t) ** np.exp(lp))
