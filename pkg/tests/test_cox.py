import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import breslow_grid_argmax, breslow_loglik_oracle, na_oracle

from survscore.cox import (
    CategoricalDesign, baseline_survival, breslow_cumhaz, fit_cox, partial_loglik, partial_loglik_derivatives,
    predict_survival,
)
from survscore.errors import ConvergenceError, NumericalError, ValidationError
from survscore.nonparametric import nelson_aalen


def _binary_design(x, times, status):
    return CategoricalDesign(times, status, {"g": np.asarray(x)}, {"g": ("a", "b")})


def interior_fixtures(count=10, n=12):
    """Random 12-row binary fixtures whose grid maximizer is away from the edges."""
    out, seed = [], 0
    while len(out) < count:
        rng = np.random.default_rng(seed)
        seed += 1
        x = rng.integers(0, 2, n)
        times = rng.integers(1, 9, n).astype(float)
        status = (rng.random(n) < 0.75).astype(int)
        if status.sum() == 0 or x.min() == x.max():
            continue
        b = breslow_grid_argmax(x, times, status)
        if abs(b) < 4.9:
            out.append((x, times, status, b))
    return out


def test_single_covariate_matches_grid_search():
    for x, times, status, b_grid in interior_fixtures():
        model = fit_cox(_binary_design(x, times, status))
        assert model.converged
        assert abs(model.beta[0] - b_grid) <= 2e-4


def test_loglik_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(15)
    times = rng.integers(1, 6, 15).astype(float)
    status = rng.integers(0, 2, 15)
    for b in (-1.3, 0.0, 0.7):
        assert partial_loglik(np.array([b]), x[:, None], times, status) == pytest.approx(
            breslow_loglik_oracle(b, x, times, status), abs=1e-12)


def test_loglik_at_zero_is_log_risk_set_sizes():
    times = np.array([1.0, 2, 3, 4])
    status = np.array([1, 0, 1, 1])
    x = np.array([[0.3], [1.0], [-2.0], [0.5]])
    assert partial_loglik(np.zeros(1), x, times, status) == pytest.approx(-(math.log(4) + math.log(2) + 0), abs=1e-14)
    assert partial_loglik(np.zeros(1), x[:1], times[:1], status[:1]) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3, 3))
def test_loglik_shift_invariant(seed, c):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((20, 2))
    times = rng.integers(1, 8, 20).astype(float)
    status = rng.integers(0, 2, 20)
    beta = rng.standard_normal(2)
    a = partial_loglik(beta, x, times, status)
    # adding c to every linear predictor: an intercept column with coefficient c
    b = partial_loglik(np.append(beta, c), np.column_stack([x, np.ones(20)]), times, status)
    assert b == pytest.approx(a, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_gradient_and_concavity(seed):
    rng = np.random.default_rng(seed)
    n, p = 25, 3
    x = rng.standard_normal((n, p))
    times = rng.integers(1, 10, n).astype(float)
    status = rng.integers(0, 2, n)
    status[0] = 1
    beta = rng.uniform(-1, 1, p)
    _, grad, hess = partial_loglik_derivatives(beta, x, times, status)
    h = 1e-6
    fd = np.array([(partial_loglik(beta + h * e, x, times, status) - partial_loglik(beta - h * e, x, times, status))
                   / (2 * h) for e in np.eye(p)])
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-7)
    assert np.all(np.linalg.eigvalsh(hess) <= 1e-10)
    d = rng.standard_normal(p)
    f = [partial_loglik(beta + s * d, x, times, status) for s in (-1e-3, 0.0, 1e-3)]
    assert f[0] + f[2] - 2 * f[1] <= 1e-9


def test_fit_gradient_near_zero_and_order_free():
    rng = np.random.default_rng(3)
    n = 80
    codes = rng.integers(0, 3, n)
    times = rng.exponential(1 / np.exp(0.5 * codes))
    status = (rng.random(n) < 0.8).astype(int)
    d = CategoricalDesign(times, status, {"v": codes}, {"v": ("lo", "mid", "hi")})
    m = fit_cox(d)
    assert np.max(np.abs(m.gradient)) <= 1e-6
    perm = rng.permutation(n)
    m2 = fit_cox(d.subset(perm))
    np.testing.assert_allclose(m2.beta, m.beta, atol=1e-10)


def test_reference_swap_preserves_predictions():
    rng = np.random.default_rng(4)
    n = 120
    a = rng.integers(0, 3, n)
    b = rng.integers(0, 2, n)
    times = rng.exponential(1 / np.exp(0.4 * a - 0.6 * b))
    status = (rng.random(n) < 0.85).astype(int)
    d = CategoricalDesign(times, status, {"a": a, "b": b}, {"a": ("x", "y", "z"), "b": ("p", "q")})
    m0, m1 = fit_cox(d), fit_cox(d, {"a": 2, "b": 1})
    for ka in range(3):
        for kb in range(2):
            for t in np.quantile(times, [0.1, 0.5, 0.9]):
                assert predict_survival(m1, {"a": ka, "b": kb}, t) == pytest.approx(
                    predict_survival(m0, {"a": ka, "b": kb}, t), abs=1e-8)


def test_null_baseline_is_nelson_aalen():
    rng = np.random.default_rng(5)
    times = rng.integers(1, 10, 40).astype(float)
    status = rng.integers(0, 2, 40)
    h = breslow_cumhaz(times, status, np.zeros(40))
    na = nelson_aalen(times, status)
    np.testing.assert_array_equal(h.knots, na.knots)
    np.testing.assert_array_equal(h.values, na.values)
    for t, v in na_oracle(times, status).items():
        assert h(t) == v


def test_baseline_survival_properties():
    rng = np.random.default_rng(6)
    a = rng.integers(0, 2, 60)
    m = fit_cox(CategoricalDesign(rng.exponential(size=60), np.ones(60, int), {"a": a}, {"a": ("0", "1")}))
    s0 = baseline_survival(m)
    assert s0(0.0) == 1.0 and np.all(np.diff(s0.values) <= 0)
    assert predict_survival(m, {"a": "0"}, 0.7) == s0(0.7)
    assert predict_survival(m, {"a": "1"}, 0.0) == 1.0
    hi, lo = ("1", "0") if m.beta[0] > 0 else ("0", "1")
    for t in (0.1, 0.5, 1.0, 3.0):
        assert predict_survival(m, {"a": hi}, t) <= predict_survival(m, {"a": lo}, t)


@pytest.mark.slow
def test_hazard_ratio_two_recovered():
    rng = np.random.default_rng(7)
    n = 5000
    g = rng.integers(0, 2, n)
    times = rng.exponential(1 / (2.0 ** g))
    m = fit_cox(_binary_design(g, times, np.ones(n, int)))
    assert abs(m.beta[0] - math.log(2)) <= 0.05


def test_independent_covariate_near_zero():
    rng = np.random.default_rng(8)
    n = 3000
    g = rng.integers(0, 2, n)
    times = rng.exponential(size=n)
    m = fit_cox(_binary_design(rng.permutation(g), times, np.ones(n, int)))
    assert abs(m.beta[0]) < 3 * m.std_err[0]


def test_monotone_likelihood_raises():
    times = np.arange(1.0, 11.0)
    g = np.array([1] * 5 + [0] * 5)  # group b always dies first
    with pytest.raises(ConvergenceError, match="monotone"):
        fit_cox(_binary_design(g, times, np.ones(10, int)))


def test_degenerate_inputs():
    with pytest.raises(NumericalError):
        fit_cox(_binary_design([0, 1], [1.0, 2.0], [0, 0]))
    with pytest.raises(ValidationError):
        fit_cox(_binary_design([0, 0, 0], [1.0, 2.0, 3.0], [1, 1, 1]))
