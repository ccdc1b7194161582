"""Seeded synthetic survival data with known log-linear hazard."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .data import CATEGORICAL, CONTINUOUS, SurvivalDataset, write_dataset
from .errors import ValidationError


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    kind: str = "normal"  # normal | binary | categorical
    coef: float = 0.0  # normal, binary
    prob: float = 0.5  # binary: P(x = 1)
    labels: tuple = ()  # categorical
    label_coefs: tuple = ()  # categorical: log hazard ratio per label


@dataclass(frozen=True)
class SynthSpec:
    """Event times are Weibull with hazard ``baseline_hazard * exp(x @ coef)``.

    Censoring is exponential and independent; its rate is either given or
    solved so the expected censored fraction equals ``censoring_fraction``.
    """

    n: int = 2000
    covariates: tuple = ()
    n_informative: int = 5
    n_noise: int = 15
    informative_coef: tuple = (1.0, 0.9, 0.8, 0.7, 0.6)
    baseline_hazard: float = 0.01
    weibull_shape: float = 1.0
    censoring_fraction: float | None = 0.2
    censoring_rate: float | None = None
    time_decimals: int | None = None
    seed: int = 0

    def covariate_specs(self) -> list:
        if self.covariates:
            return [c if isinstance(c, CovariateSpec) else CovariateSpec(**c) for c in self.covariates]
        coefs = list(self.informative_coef)
        if len(coefs) < self.n_informative:
            coefs += [coefs[-1] if coefs else 0.5] * (self.n_informative - len(coefs))
        specs = [CovariateSpec(f"x{i + 1}", "normal", coefs[i]) for i in range(self.n_informative)]
        specs += [CovariateSpec(f"noise{i + 1}", "normal", 0.0) for i in range(self.n_noise)]
        return specs

    @classmethod
    def from_dict(cls, d) -> "SynthSpec":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown synth keys: {sorted(unknown)}")
        for k in ("covariates", "informative_coef"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def generate(spec: SynthSpec):
    """Return (dataset, truth) where truth records the generating parameters."""
    if spec.n < 1:
        raise ValidationError("n must be >= 1")
    rng = np.random.default_rng(spec.seed)
    covs = spec.covariate_specs()
    if not covs:
        raise ValidationError("no covariates requested")
    lp = np.zeros(spec.n)
    columns, schema = {}, {}
    for c in covs:
        if c.kind == "normal":
            x = rng.standard_normal(spec.n)
            lp += c.coef * x
            columns[c.name], schema[c.name] = x, CONTINUOUS
        elif c.kind == "binary":
            x = (rng.random(spec.n) < c.prob).astype(float)
            lp += c.coef * x
            columns[c.name], schema[c.name] = x, CONTINUOUS
        elif c.kind == "categorical":
            if not c.labels or len(c.label_coefs) != len(c.labels):
                raise ValidationError(f"covariate {c.name!r}: labels and label_coefs must match")
            k = rng.integers(0, len(c.labels), size=spec.n)
            lp += np.asarray(c.label_coefs, dtype=float)[k]
            columns[c.name] = np.array(c.labels, dtype=object)[k]
            schema[c.name] = CATEGORICAL
        else:
            raise ValidationError(f"covariate {c.name!r}: unknown kind {c.kind!r}")

    u = rng.random(spec.n)
    t_event = (-np.log1p(-u) / (spec.baseline_hazard * np.exp(lp))) ** (1.0 / spec.weibull_shape)
    rate = spec.censoring_rate
    if rate is None and spec.censoring_fraction:
        target = float(spec.censoring_fraction)
        if not 0.0 < target < 1.0:
            raise ValidationError("censoring_fraction must lie in (0, 1)")
        rate = brentq(lambda r: np.mean(-np.expm1(-r * t_event)) - target, 1e-12, 1e6 / np.min(t_event))
    if rate:
        t_cens = rng.exponential(1.0 / rate, size=spec.n)
    else:
        t_cens = np.full(spec.n, np.inf)
    times = np.minimum(t_event, t_cens)
    status = (t_event <= t_cens).astype(int)
    if spec.time_decimals is not None:
        times = np.round(times, spec.time_decimals)
    ds = SurvivalDataset(times, status, columns, schema)
    truth = {
        "spec": _jsonable(asdict(spec)),
        "coefficients": {c.name: (dict(zip(c.labels, c.label_coefs)) if c.kind == "categorical" else c.coef)
                         for c in covs},
        "informative": [c.name for c in covs if (c.coef != 0 or any(c.label_coefs))],
        "censoring_rate": rate,
        "censored_fraction": float(1 - status.mean()),
        "schema": schema,
    }
    return ds, truth


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_synth(spec: SynthSpec, path) -> dict:
    """Write the CSV and a ``<stem>.truth.json`` sidecar next to it."""
    ds, truth = generate(spec)
    path = Path(path)
    write_dataset(ds, path)
    path.with_suffix(".truth.json").write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n")
    return truth
