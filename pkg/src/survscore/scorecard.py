"""Categorize variables, turn Cox coefficients into integer points, score patients."""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cox import CategoricalDesign, fit_cox
from .data import CATEGORICAL, CONTINUOUS, SurvivalDataset
from .errors import NumericalError, ValidationError

log = logging.getLogger(__name__)

DEFAULT_QUANTILES = (0.05, 0.20, 0.80, 0.95)
# step-2 coefficients within this distance of zero are treated as zero
ZERO_TOL = 1e-8


def round_half_away(x):
    """Round to the nearest integer, halves away from zero."""
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    f = np.floor(a)
    r = f + (a - f >= 0.5)
    out = np.sign(x) * r
    return out.astype(np.int64) if out.ndim else int(out)


def fmt_number(x: float) -> str:
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


@dataclass(frozen=True)
class VariableCuts:
    """How one variable maps onto categories.

    Continuous variables use strictly increasing ``cuts``; category k is
    [cuts[k-1], cuts[k]) with open ends. Categorical variables use ``groups``,
    a tuple of label tuples, one per category.
    """

    kind: str
    cuts: tuple = ()
    groups: tuple = ()

    def __post_init__(self):
        if self.kind == CONTINUOUS:
            cuts = tuple(float(c) for c in self.cuts)
            if any(not math.isfinite(c) for c in cuts):
                raise ValidationError("cut points must be finite")
            if any(b <= a for a, b in zip(cuts, cuts[1:])):
                raise ValidationError(f"cut points must be strictly increasing, got {list(cuts)}")
            object.__setattr__(self, "cuts", cuts)
        elif self.kind == CATEGORICAL:
            groups = tuple(tuple(str(lab) for lab in g) for g in self.groups)
            flat = [lab for g in groups for lab in g]
            if not groups or any(not g for g in groups) or len(set(flat)) != len(flat):
                raise ValidationError("categorical groups must be non-empty and disjoint")
            object.__setattr__(self, "groups", groups)
        else:
            raise ValidationError(f"unknown variable kind {self.kind!r}")

    @property
    def n_categories(self) -> int:
        return len(self.cuts) + 1 if self.kind == CONTINUOUS else len(self.groups)

    def labels(self) -> list:
        if self.kind == CATEGORICAL:
            return ["|".join(g) for g in self.groups]
        c = [fmt_number(v) for v in self.cuts]
        if not c:
            return ["any"]
        return [f"<{c[0]}"] + [f"[{a},{b})" for a, b in zip(c, c[1:])] + [f">={c[-1]}"]

    def assign(self, values) -> np.ndarray:
        """Category index of each value; continuous boundaries go to the upper interval."""
        values = np.asarray(values, dtype=float if self.kind == CONTINUOUS else object)
        if self.kind == CONTINUOUS:
            if not np.all(np.isfinite(values)):
                raise ValidationError("cannot categorize non-finite values")
            return np.searchsorted(np.array(self.cuts), values, side="right").astype(np.int64)
        lookup = {lab: k for k, g in enumerate(self.groups) for lab in g}
        out = np.empty(values.shape, dtype=np.int64)
        for i, v in enumerate(values.ravel()):
            try:
                out.flat[i] = lookup[str(v)]
            except KeyError:
                raise ValidationError(f"unseen label {v!r}") from None
        return out

    def merged(self, k: int, into: int) -> "VariableCuts":
        """Merge category ``k`` into its neighbour ``into``."""
        if self.kind == CONTINUOUS:
            drop = min(k, into)
            return VariableCuts(CONTINUOUS, self.cuts[:drop] + self.cuts[drop + 1:])
        groups = list(self.groups)
        groups[into] = groups[into] + groups[k]
        del groups[k]
        return VariableCuts(CATEGORICAL, groups=tuple(groups))

    def to_dict(self) -> dict:
        if self.kind == CONTINUOUS:
            return {"kind": self.kind, "cuts": list(self.cuts)}
        return {"kind": self.kind, "groups": [list(g) for g in self.groups]}

    @classmethod
    def from_dict(cls, d) -> "VariableCuts":
        if d["kind"] == CONTINUOUS:
            return cls(CONTINUOUS, tuple(d["cuts"]))
        return cls(CATEGORICAL, groups=tuple(tuple(g) for g in d["groups"]))


def apply_cutoffs(value, cuts: VariableCuts) -> int:
    return int(cuts.assign([value])[0])


def quantile_cuts(values, quantiles=DEFAULT_QUANTILES) -> tuple:
    """Interior cut points at linear-interpolation quantiles of ``values``.

    Duplicates are merged and cuts that would leave an interval without any
    training value are dropped.
    """
    values = np.sort(np.asarray(values, dtype=float))
    qs = np.unique(np.quantile(values, sorted(quantiles), method="linear"))
    kept = []
    lo = -np.inf
    for c in qs:
        if np.any((values >= lo) & (values < c)):
            kept.append(float(c))
            lo = c
    return tuple(kept)


def derive_cutoffs(train: SurvivalDataset, variables: Sequence[str], quantile_spec=DEFAULT_QUANTILES) -> dict:
    """Per-variable categorization from training-set quantiles."""
    if any(not 0.0 < q < 1.0 for q in quantile_spec):
        raise ValidationError("quantiles must lie strictly between 0 and 1")
    out = {}
    for v in variables:
        kind = train.schema[v]
        if kind == CONTINUOUS:
            cuts = quantile_cuts(train.covariates[v], quantile_spec)
            if not cuts:
                log.warning("variable %r has a single value in training data; using one interval", v)
            out[v] = VariableCuts(CONTINUOUS, cuts)
        else:
            out[v] = VariableCuts(CATEGORICAL, groups=tuple((lab,) for lab in train.labels(v)))
    return out


def categorize(ds: SurvivalDataset, cutoffs: Mapping[str, VariableCuts], variables=None) -> CategoricalDesign:
    variables = list(cutoffs) if variables is None else list(variables)
    return CategoricalDesign(
        ds.times, ds.status,
        {v: cutoffs[v].assign(ds.covariates[v]) for v in variables},
        {v: tuple(cutoffs[v].labels()) for v in variables},
    )


def merge_sparse_categories(train: SurvivalDataset, cutoffs: dict, variables) -> dict:
    """Merge categories with no events (or no rows) into the neighbour nearer category 0."""
    out = dict(cutoffs)
    for v in variables:
        cuts = out[v]
        while cuts.n_categories > 1:
            codes = cuts.assign(train.covariates[v])
            events = np.bincount(codes[train.status == 1], minlength=cuts.n_categories)
            empty = np.flatnonzero(events == 0)
            if empty.size == 0:
                break
            k = int(empty[0])
            into = k - 1 if k > 0 else 1
            log.warning("variable %r: category %s has no events; merged into %s",
                        v, cuts.labels()[k], cuts.labels()[into])
            cuts = cuts.merged(k, into)
        out[v] = cuts
    return out


def points_from_coefficients(coefs: Mapping[str, Sequence[float]]) -> dict:
    """Integer points from re-referenced (non-negative) coefficients.

    Every coefficient is divided by the smallest strictly positive one across
    all variables and rounded half away from zero.
    """
    clean = {}
    for v, c in coefs.items():
        c = np.asarray(c, dtype=float)
        if np.any(c < -ZERO_TOL):
            raise NumericalError(f"variable {v!r}: negative coefficient after re-referencing ({c.min():.3g})")
        clean[v] = np.where(c <= ZERO_TOL, 0.0, c)
    positive = [c[c > 0] for c in clean.values()]
    positive = np.concatenate(positive) if positive else np.empty(0)
    if positive.size == 0:
        raise NumericalError("degenerate model: every coefficient is zero")
    unit = positive.min()
    return {v: tuple(int(p) for p in round_half_away(c / unit)) for v, c in clean.items()}


@dataclass(frozen=True)
class ScoreCard:
    variables: tuple
    cutoffs: dict
    points: dict
    provenance: dict = field(default_factory=dict)
    coefficients: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        for v in self.variables:
            if len(self.points[v]) != self.cutoffs[v].n_categories:
                raise ValidationError(f"variable {v!r}: {len(self.points[v])} points for "
                                      f"{self.cutoffs[v].n_categories} categories")
            if any(int(p) != p or p < 0 for p in self.points[v]):
                raise ValidationError(f"variable {v!r}: points must be non-negative integers")

    @property
    def maxima(self) -> dict:
        return {v: max(self.points[v]) for v in self.variables}

    @property
    def max_total(self) -> int:
        return int(sum(self.maxima.values()))

    def score_patient(self, x: Mapping) -> int:
        total = 0
        for v in self.variables:
            if v not in x:
                raise ValidationError(f"missing variable {v!r}")
            try:
                k = apply_cutoffs(x[v], self.cutoffs[v])
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"variable {v!r}: {exc}") from None
            total += self.points[v][k]
        return int(total)

    def score_dataset(self, ds: SurvivalDataset) -> np.ndarray:
        total = np.zeros(ds.n, dtype=np.int64)
        for v in self.variables:
            if v not in ds.covariates:
                raise ValidationError(f"missing variable {v!r}")
            try:
                codes = self.cutoffs[v].assign(ds.covariates[v])
            except ValidationError as exc:
                raise ValidationError(f"variable {v!r}: {exc}") from None
            total += np.asarray(self.points[v], dtype=np.int64)[codes]
        return total

    def rows(self):
        for v in self.variables:
            for label, p in zip(self.cutoffs[v].labels(), self.points[v]):
                yield v, label, int(p)

    def to_dict(self) -> dict:
        return {
            "variables": [
                dict(self.cutoffs[v].to_dict(), variable=v, intervals=self.cutoffs[v].labels(),
                     points=[int(p) for p in self.points[v]],
                     **({"coefficients": [float(c) for c in self.coefficients[v]]} if v in self.coefficients else {}))
                for v in self.variables
            ],
            "max_total": self.max_total,
            "provenance": self.provenance,
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, d) -> "ScoreCard":
        names = [e["variable"] for e in d["variables"]]
        return cls(
            names,
            {e["variable"]: VariableCuts.from_dict(e) for e in d["variables"]},
            {e["variable"]: tuple(e["points"]) for e in d["variables"]},
            d.get("provenance", {}),
            {e["variable"]: tuple(e["coefficients"]) for e in d["variables"] if "coefficients" in e},
        )

    @classmethod
    def from_json(cls, path) -> "ScoreCard":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_csv(self, path, header_comment: str | None = None) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variable", "interval", "points"])
            w.writerows(self.rows())

    @classmethod
    def from_csv(cls, path) -> "ScoreCard":
        """Read the (variable, interval, points) table; interval syntax decides the kind."""
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(line for line in fh if not line.startswith("#")))
        header, body = rows[0], [r for r in rows[1:] if r]
        if [h.strip().lower() for h in header[:3]] != ["variable", "interval", "points"]:
            raise ValidationError(f"{path}: expected header variable,interval,points")
        order, table = [], {}
        for var, interval, pts in body:
            if var not in table:
                order.append(var)
                table[var] = []
            table[var].append((interval.strip(), int(pts)))
        cutoffs, points = {}, {}
        for v in order:
            labels = [lab for lab, _ in table[v]]
            cutoffs[v] = _parse_intervals(labels)
            points[v] = tuple(p for _, p in table[v])
        return cls(order, cutoffs, points)


_NUM = r"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"
_LOW = re.compile(rf"^<\s*{_NUM}$")
_MID = re.compile(rf"^\[\s*{_NUM}\s*,\s*{_NUM}\s*\)$")
_HIGH = re.compile(rf"^>=\s*{_NUM}$")


def _parse_intervals(labels) -> VariableCuts:
    if labels == ["any"]:
        return VariableCuts(CONTINUOUS, ())
    if len(labels) >= 2:
        lo, hi = _LOW.match(labels[0]), _HIGH.match(labels[-1])
        mids = [_MID.match(lab) for lab in labels[1:-1]]
        if lo and hi and all(mids):
            cuts = [float(lo.group(1))]
            for m in mids:
                if float(m.group(1)) != cuts[-1]:
                    raise ValidationError(f"intervals {labels} are not contiguous")
                cuts.append(float(m.group(2)))
            if float(hi.group(1)) != cuts[-1]:
                raise ValidationError(f"intervals {labels} are not contiguous")
            return VariableCuts(CONTINUOUS, tuple(cuts))
    return VariableCuts(CATEGORICAL, groups=tuple(tuple(lab.split("|")) for lab in labels))


def derive_scores(train: SurvivalDataset, selected_vars: Sequence[str], cutoffs: Mapping[str, VariableCuts],
                  provenance: dict | None = None) -> ScoreCard:
    """Raw integer scorecard from two Cox fits.

    The first fit uses category 0 as reference; each variable is then
    re-referenced to its lowest-coefficient category and refitted, so every
    coefficient is non-negative. Points are the coefficients divided by the
    smallest positive one, rounded. Categories without events are merged
    beforehand.
    """
    selected_vars = list(selected_vars)
    if not selected_vars:
        raise ValidationError("no variables selected")
    cutoffs = merge_sparse_categories(train, {v: cutoffs[v] for v in selected_vars}, selected_vars)
    design = categorize(train, cutoffs, selected_vars)
    try:
        step1 = fit_cox(design)
    except (NumericalError, ValidationError) as exc:
        raise type(exc)(f"first Cox fit: {exc}") from exc
    refs = {v: int(np.argmin(c)) for v, c in step1.coefficients.items()}
    try:
        step2 = fit_cox(design, refs)
    except (NumericalError, ValidationError) as exc:
        raise type(exc)(f"re-referenced Cox fit: {exc}") from exc
    coefs = step2.coefficients
    points = points_from_coefficients(coefs)
    prov = dict(provenance or {})
    prov.setdefault("training_fingerprint", train.fingerprint())
    prov.setdefault("m", len(selected_vars))
    return ScoreCard(selected_vars, cutoffs, points, prov, {v: tuple(float(x) for x in c) for v, c in coefs.items()})


def normalize_scorecard(card: ScoreCard, target: int = 100) -> ScoreCard:
    """Rescale points so the per-variable maxima add up to ``target``.

    Points are scaled by target / max_total and rounded; any rounding drift
    is absorbed by the variable with the largest maximum. Upward drift raises
    every category at that maximum; downward drift caps the variable at its
    lowered maximum, moving on to the next-largest variable if needed.
    """
    total = card.max_total
    if total <= 0:
        raise NumericalError("cannot normalize a scorecard whose maximum total is 0")
    pts = {v: [int(p) for p in round_half_away(np.asarray(card.points[v]) * target / total)]
           for v in card.variables}
    drift = target - sum(max(p) for p in pts.values())
    while drift:
        top = max(card.variables, key=lambda v: (max(pts[v]), -card.variables.index(v)))
        m = max(pts[top])
        if drift > 0:
            pts[top] = [p + drift if p == m else p for p in pts[top]]
            drift = 0
        else:
            # lower the maximum; categories above the new maximum are capped at it
            cut = min(-drift, m)
            pts[top] = [min(p, m - cut) for p in pts[top]]
            drift += cut
    return replace(card, points={v: tuple(p) for v, p in pts.items()})


def parse_overrides(overrides: Mapping, card: ScoreCard) -> dict:
    out = {}
    for v, spec in overrides.items():
        if v not in card.cutoffs:
            raise ValidationError(f"override for unknown variable {v!r}")
        if isinstance(spec, VariableCuts):
            out[v] = spec
        elif card.cutoffs[v].kind == CONTINUOUS:
            out[v] = VariableCuts(CONTINUOUS, tuple(spec))
        else:
            out[v] = VariableCuts(CATEGORICAL, groups=tuple(tuple(g) for g in spec))
            old = {lab for g in card.cutoffs[v].groups for lab in g}
            new = {lab for g in out[v].groups for lab in g}
            if old != new:
                raise ValidationError(f"override for {v!r} must regroup exactly the labels {sorted(old)}")
    return out


def fine_tune(card: ScoreCard, overrides: Mapping, train: SurvivalDataset, target: int = 100) -> ScoreCard:
    """Replace cut points for the named variables and re-derive the card on ``train``."""
    cutoffs = dict(card.cutoffs)
    cutoffs.update(parse_overrides(overrides, card))
    prov = dict(card.provenance)
    raw = derive_scores(train, card.variables, cutoffs, prov)
    return normalize_scorecard(raw, target)
