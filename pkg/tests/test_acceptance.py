"""Acceptance criteria 1-11, one test each.

Every test records a one-line PASS/FAIL verdict; the lines are printed in the
pytest terminal summary and when this file is run directly.
"""

from __future__ import annotations

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from oracles import (
    breslow_grid_argmax, c_index_oracle, km_oracle, logrank_oracle, na_oracle, pairwise_auc_oracle,
)
from scipy import integrate, stats

from survscore.cox import CategoricalDesign, breslow_cumhaz, fit_cox, partial_loglik, partial_loglik_derivatives
from survscore.data import CONTINUOUS
from survscore.metrics import HIGHER_IS_SAFER, auc_at, bootstrap_ci, c_index, iauc, iauc_details
from survscore.nonparametric import km_fit, logrank_test, nelson_aalen
from survscore.pipeline import PipelineConfig, cmd_synth, load_splits, run_all
from survscore.scorecard import ScoreCard, points_from_coefficients
from survscore.synth import SynthSpec, generate

RESULTS: dict[int, str] = {}
TABLE2 = Path(__file__).parent / "data" / "table2_scorecard.csv"


def record(number: int, ok: bool, detail: str) -> None:
    RESULTS[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(RESULTS[number])
    assert ok, RESULTS[number]


def test_criterion_01_km_nelson_aalen_oracle():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 31))
        t = rng.integers(1, 10, n).astype(float)
        s = rng.integers(0, 2, n)
        km, na = km_fit(t, s), nelson_aalen(t, s)
        for u, v in km_oracle(t, s).items():
            worst = max(worst, abs(km.survival(u) - v))
        for u, v in na_oracle(t, s).items():
            worst = max(worst, abs(na(u) - v))
    elapsed = time.perf_counter() - start
    record(1, worst == 0.0 and elapsed < 1.0, f"max error {worst:g} on 50 samples, {elapsed:.3f}s")


def test_criterion_02_logrank_oracle():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n1, n2 = rng.integers(2, 11, 2)
        t1, t2 = rng.integers(1, 8, n1).astype(float), rng.integers(1, 8, n2).astype(float)
        s1, s2 = rng.integers(0, 2, n1), rng.integers(0, 2, n2)
        s1[0] = 1
        got = logrank_test([(t1, s1), (t2, s2)]).statistic
        worst = max(worst, abs(got - logrank_oracle(t1, s1, t2, s2)))
    same = logrank_test([([1, 2, 3], [1, 0, 1]), ([1, 2, 3], [1, 0, 1])]).statistic
    record(2, worst <= 1e-10 and same == 0.0, f"max |diff| {worst:.2e} on 20 fixtures, identical groups -> {same}")


def test_criterion_03_cox_oracle():
    start = time.perf_counter()
    worst_beta, fixtures, seed = 0.0, 0, 0
    while fixtures < 10:
        rng = np.random.default_rng(seed)
        seed += 1
        x = rng.integers(0, 2, 12)
        t = rng.integers(1, 9, 12).astype(float)
        s = (rng.random(12) < 0.75).astype(int)
        if s.sum() == 0 or x.min() == x.max():
            continue
        b_grid = breslow_grid_argmax(x, t, s)
        if abs(b_grid) >= 4.9:  # separated fixture: no interior maximum
            continue
        b = fit_cox(CategoricalDesign(t, s, {"g": x}, {"g": ("0", "1")})).beta[0]
        worst_beta = max(worst_beta, abs(b - b_grid))
        fixtures += 1

    worst_grad = 0.0
    for seed in range(10):
        rng = np.random.default_rng(1000 + seed)
        x = rng.standard_normal((30, 3))
        t = rng.integers(1, 12, 30).astype(float)
        s = rng.integers(0, 2, 30)
        s[0] = 1
        beta = rng.uniform(-1, 1, 3)
        _, grad, _ = partial_loglik_derivatives(beta, x, t, s)
        h = 1e-6
        fd = np.array([(partial_loglik(beta + h * e, x, t, s) - partial_loglik(beta - h * e, x, t, s)) / (2 * h)
                       for e in np.eye(3)])
        worst_grad = max(worst_grad, float(np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-3))))

    t = np.random.default_rng(7).integers(1, 10, 40).astype(float)
    s = np.random.default_rng(8).integers(0, 2, 40)
    na, h0 = nelson_aalen(t, s), breslow_cumhaz(t, s, np.zeros(40))
    exact = np.array_equal(na.knots, h0.knots) and np.array_equal(na.values, h0.values)
    elapsed = time.perf_counter() - start
    ok = worst_beta <= 2e-4 and worst_grad <= 1e-5 and exact and elapsed < 10
    record(3, ok, f"|beta - grid| <= {worst_beta:.1e}, grad rel err {worst_grad:.1e}, "
                  f"null baseline == Nelson-Aalen: {exact}, {elapsed:.2f}s")


def test_criterion_04_c_index_oracle():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(10, 201))
        r = rng.integers(0, 20, n).astype(float) if seed % 2 else rng.standard_normal(n)
        t = rng.integers(1, 30, n).astype(float)
        s = rng.integers(0, 2, n)
        for policy, credit in (("paper", 0.0), ("harrell", 0.5)):
            worst = max(worst, abs(c_index(r, t, s, tie_policy=policy) - c_index_oracle(r, t, s, credit)))
    t = np.arange(1.0, 51.0)
    perfect = c_index(-t, t, np.ones(50, int))
    rng = np.random.default_rng(3)
    r, t, s = rng.standard_normal(150), rng.exponential(size=150), rng.integers(0, 2, 150)
    flip_exact = c_index(r, t, s, HIGHER_IS_SAFER) == 1.0 - c_index(r, t, s)
    record(4, worst <= 1e-12 and perfect == 1.0 and flip_exact,
           f"max |diff| {worst:.1e}, perfect ranking -> {perfect}, flip == 1 - C exactly: {flip_exact}")


def test_criterion_05_auc_uncensored():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(10, 150))
        sc = rng.standard_normal(n)
        t = rng.exponential(size=n)
        tq = float(np.quantile(t, rng.uniform(0.2, 0.8)))
        worst = max(worst, abs(auc_at(sc, t, np.ones(n, int), tq) - pairwise_auc_oracle(sc, t <= tq)))
    record(5, worst <= 1e-12, f"max |auc_at - pairwise AUC| {worst:.1e} on 20 fixtures")


def test_criterion_06_iauc_hand_fixture():
    scores = [9, 4, 7, 5, 1, 3, 8, 2, 6, 0]
    times = [2, 2, 5, 6, 7, 8, 9, 10, 11, 12]
    status = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
    # AUC(2) = 12/16, AUC(5) = 17/21, KM drops 0.2 and 0.1
    hand = (0.2 * 12 / 16 + 0.1 * 17 / 21) / 0.3
    res = iauc_details(scores, times, status)
    err, wsum = abs(res.value - hand), abs(res.weights.sum() - 1.0)
    record(6, err <= 1e-10 and wsum <= 1e-12, f"|iAUC - hand| {err:.1e}, |sum w - 1| {wsum:.1e}")


def test_criterion_07_table2_fixture():
    card = ScoreCard.from_csv(TABLE2)
    patient = dict(age=80, bun=15, resp_rate=24, creatinine=1.0, anion_gap=12, lactate=2.0, temperature=37.0)
    worst = dict(age=90, bun=8.0, resp_rate=30, creatinine=0.3, anion_gap=25, lactate=5, temperature=35)
    a, b = card.score_patient(patient), card.score_patient(worst)
    record(7, a == 44 and b == 100 and card.max_total == 100,
           f"fixture patient -> {a}, all-max patient -> {b}, maxima sum {card.max_total}")


def test_criterion_08_score_arithmetic():
    pts = points_from_coefficients({"A": (0, 0.30, 0.90), "B": (0, 0.15)})
    record(8, pts == {"A": (0, 2, 6), "B": (0, 1)}, f"points {pts}")


def _synth_config(root: Path, seed: int, workers: int = 1, **extra) -> PipelineConfig:
    spec = SynthSpec(n=2000, n_informative=5, n_noise=15, censoring_fraction=0.2, seed=seed)
    data = root / f"synth_{seed}.csv"
    if not data.exists():
        cmd_synth(spec, data)
    raw = {"data": str(data), "columns": {c.name: CONTINUOUS for c in spec.covariate_specs()},
           "seed": seed, "out_dir": str(root / f"out_{seed}_{workers}"), "workers": workers}
    raw.update(extra)
    return PipelineConfig.load(None, raw)


@pytest.mark.slow
def test_criterion_09_synthetic_end_to_end(tmp_path):
    from survscore.forest import grow_forest, permutation_importance
    start = time.perf_counter()
    informative = {f"x{i}" for i in range(1, 6)}
    hits = 0
    for seed in range(20):
        cfg = _synth_config(tmp_path, seed)
        train = load_splits(cfg)[0]
        ranking = permutation_importance(grow_forest(train, cfg.forest_params()))
        hits += informative <= set(ranking.top(8))

    cfg = _synth_config(tmp_path, 0, selection={"policy": "manual", "m": 5}, m_max=20)
    card, table, report = run_all(cfg)
    c, ia = report.c_index.estimate, report.iauc.estimate
    gap = abs(table.row(5).iauc - table.row(20).iauc)
    elapsed = time.perf_counter() - start
    ok = hits >= 18 and c >= 0.70 and ia >= 0.70 and gap <= 0.02 and elapsed < 300
    record(9, ok, f"informative in top 8: {hits}/20 seeds; m=5 test C {c:.3f}, iAUC {ia:.3f}; "
                  f"|iAUC(5) - iAUC(20)| {gap:.4f}; {elapsed:.0f}s")


def _outputs(out_dir: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(out_dir.iterdir())}


@pytest.mark.slow
def test_criterion_10_determinism(tmp_path):
    spec = SynthSpec(n=800, n_informative=3, n_noise=5, seed=11)
    cmd_synth(spec, tmp_path / "d.csv")
    cmd_synth(spec, tmp_path / "d2.csv")
    same_data = (tmp_path / "d.csv").read_bytes() == (tmp_path / "d2.csv").read_bytes()
    runs = {}
    for workers in (1, 8):
        for rep in (0, 1):
            cfg = PipelineConfig.load(None, {
                "data": str(tmp_path / "d.csv"), "columns": {c.name: CONTINUOUS for c in spec.covariate_specs()},
                "forest": {"n_trees": 100}, "selection": {"m": 3}, "eval_times": [20, 60], "seed": 11,
                "out_dir": str(tmp_path / f"out_w{workers}_r{rep}"), "workers": workers})
            run_all(cfg)
            runs[(workers, rep)] = _outputs(cfg.out_dir)
    base = runs[(1, 0)]
    differing = sorted({n for r in runs.values() for n in base if r.get(n) != base[n]})
    ok = same_data and not differing and len(base) >= 8
    record(10, ok, f"{len(base)} output files byte-identical across 2 runs x (1, 8) workers; "
                   f"differing: {differing or 'none'}; synth file identical: {same_data}")


def large_sample_c(beta: float) -> float:
    """C for uncensored exponential times with hazard exp(beta * x), x ~ N(0, 1).

    For a pair, P(T_i < T_j | x) = sigmoid(beta * D) with D = x_i - x_j ~ N(0, 2), so
    C = P(x_i > x_j, T_i < T_j) / P(T_i < T_j) = 2 E[sigmoid(beta D) 1{D > 0}].
    """
    sd = math.sqrt(2.0)
    val, _ = integrate.quad(lambda d: stats.norm.pdf(d, scale=sd) / (1.0 + math.exp(-beta * d)), 0, np.inf)
    return 2.0 * val


@pytest.mark.slow
def test_criterion_11_bootstrap_ci():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(150)
    t = rng.exponential(1 / np.exp(x))
    s = np.ones(150, int)
    a = bootstrap_ci(c_index, (x, t, s), B=100, level=0.95, seed=42)
    b = bootstrap_ci(c_index, (x, t, s), B=100, level=0.95, seed=42)
    reproducible = tuple(a) == tuple(b) and np.array_equal(a.replicates, b.replicates)

    beta, n = 1.0, 200
    truth = large_sample_c(beta)
    covered = 0
    for rep in range(100):
        r = np.random.default_rng(10_000 + rep)
        x = r.standard_normal(n)
        t = r.exponential(1 / np.exp(beta * x))
        ci = bootstrap_ci(c_index, (x, t, np.ones(n, int)), B=100, level=0.95, seed=rep)
        covered += ci.lower <= truth <= ci.upper
    record(11, reproducible and covered >= 85,
           f"seeded intervals identical: {reproducible}; coverage of C={truth:.4f}: {covered}/100")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
