"""Model-size sweep over the variable ranking, scored by validation iAUC."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

from joblib import Parallel, delayed

from .errors import SurvScoreError, ValidationError
from .metrics import iauc
from .scorecard import DEFAULT_QUANTILES, derive_cutoffs, derive_scores, normalize_scorecard

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParsimonyRow:
    m: int
    variables: tuple
    iauc: float | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.iauc is not None


@dataclass(frozen=True)
class ParsimonyTable:
    rows: tuple
    selected_m: int | None = None

    def row(self, m: int) -> ParsimonyRow:
        for r in self.rows:
            if r.m == m:
                return r
        raise ValidationError(f"no parsimony row for m={m}")

    def to_csv(self, path, header_comment: str | None = None) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["m", "iauc", "variables", "selected", "error"])
            for r in self.rows:
                w.writerow([r.m, "" if r.iauc is None else repr(r.iauc), ";".join(r.variables),
                            int(r.m == self.selected_m), r.error or ""])


def _evaluate_m(train, validation, variables, quantile_spec, horizon):
    m = len(variables)
    try:
        cutoffs = derive_cutoffs(train, variables, quantile_spec)
        card = normalize_scorecard(derive_scores(train, variables, cutoffs))
        scores = card.score_dataset(validation)
        value = iauc(scores, validation.times, validation.status, horizon)
    except SurvScoreError as exc:
        log.warning("parsimony m=%d failed: %s", m, exc)
        return ParsimonyRow(m, tuple(variables), None, str(exc))
    return ParsimonyRow(m, tuple(variables), value)


def run_parsimony(train, validation, ranking, m_max=None, quantile_spec=DEFAULT_QUANTILES,
                  horizon=None, workers: int = 1) -> ParsimonyTable:
    """Fit a scorecard on the top-m ranked variables for m = 1..m_max.

    Failed fits are recorded with their error instead of stopping the sweep.
    """
    names = list(ranking.names if hasattr(ranking, "names") else ranking)
    if not names:
        raise ValidationError("variable ranking is empty")
    m_max = len(names) if m_max is None else int(m_max)
    if not 1 <= m_max <= len(names):
        raise ValidationError(f"m_max must lie in [1, {len(names)}], got {m_max}")
    jobs = [delayed(_evaluate_m)(train, validation, names[:m], quantile_spec, horizon)
            for m in range(1, m_max + 1)]
    if workers != 1:
        rows = Parallel(n_jobs=workers, prefer="threads")(jobs)
    else:
        rows = [f(*a, **k) for f, a, k in jobs]
    return ParsimonyTable(tuple(rows))


def select_m(table: ParsimonyTable, policy: str = "manual", m: int | None = None, epsilon: float = 0.005) -> int:
    """Pick the model size.

    ``manual`` returns ``m`` after checking its row succeeded; ``elbow``
    returns the smallest m whose iAUC is within ``epsilon`` of the best.
    """
    ok = [r for r in table.rows if r.ok]
    if not ok:
        raise ValidationError("no successful parsimony rows")
    if policy == "manual":
        if m is None:
            raise ValidationError("manual selection needs m")
        row = table.row(m)
        if not row.ok:
            raise ValidationError(f"m={m} failed during the sweep: {row.error}")
        return m
    if policy == "elbow":
        best = max(r.iauc for r in ok)
        return min(r.m for r in ok if r.iauc >= best - epsilon)
    raise ValidationError(f"unknown selection policy {policy!r}")


def with_selection(table: ParsimonyTable, m: int) -> ParsimonyTable:
    return replace(table, selected_m=m)
