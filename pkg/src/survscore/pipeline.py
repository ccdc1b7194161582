"""End-to-end orchestration: rank, derive, evaluate, score, synth.

All randomness comes from the master ``seed``: the data split, the forest and
the bootstrap each get a fixed child seed unless configured explicitly.
"""

from __future__ import annotations

import contextlib
import copy
import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .data import CONTINUOUS, SplitSpec, load_dataset, split_dataset, summarize
from .errors import SurvScoreError, ValidationError
from .forest import ForestParams, VariableRanking, grow_forest, permutation_importance
from .metrics import evaluate as evaluate_metrics
from .nonparametric import km_fit, km_percentile, logrank_test, write_km_csv
from .parsimony import run_parsimony, select_m, with_selection
from .scorecard import DEFAULT_QUANTILES, ScoreCard, derive_cutoffs, derive_scores, fine_tune, fmt_number, normalize_scorecard
from .synth import SynthSpec, write_synth

log = logging.getLogger(__name__)

DEFAULT_STRATA = (20, 30, 40, 50, 60)
# child-seed slots under the master seed
_SPLIT, _FOREST, _BOOTSTRAP = 1, 2, 3

DEFAULTS = {
    "data": None,
    "time_col": "time",
    "status_col": "status",
    "columns": {},
    "missing_policy": "reject",
    "split": {"ratios": [0.7, 0.1, 0.2], "seed": None},
    "forest": {},
    "ranking": None,
    "quantiles": list(DEFAULT_QUANTILES),
    "m_max": None,
    "selection": {"policy": "manual", "m": None, "epsilon": 0.005},
    "overrides": {},
    "eval_times": [],
    "horizon": None,
    "strata": list(DEFAULT_STRATA),
    "bootstrap": {"B": 100, "level": 0.95},
    "tie_policy": "paper",
    "seed": 0,
    "out_dir": "out",
    "workers": 1,
}
# keys that may differ between runs without changing any output
_UNHASHED = ("out_dir", "workers")


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def child_seed(master: int, slot: int) -> int:
    return int(np.random.SeedSequence([int(master), slot]).generate_state(1, np.uint32)[0])


@dataclass
class PipelineConfig:
    raw: dict

    @classmethod
    def load(cls, path=None, overrides=None) -> "PipelineConfig":
        cfg = copy.deepcopy(DEFAULTS)
        if path is not None:
            try:
                user = json.loads(Path(path).read_text())
            except json.JSONDecodeError as exc:
                raise ValidationError(f"config {path}: invalid JSON ({exc})") from None
            if not isinstance(user, dict):
                raise ValidationError("config must be a JSON object")
            if user.get("data") and not Path(user["data"]).is_absolute():
                user["data"] = str(Path(path).parent / user["data"])
            cfg = _merge(cfg, user)
        cfg = _merge(cfg, overrides or {})
        unknown = set(cfg) - set(DEFAULTS)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        out = cls(cfg)
        out.validate()
        return out

    def __getitem__(self, key):
        return self.raw[key]

    def validate(self):
        c = self.raw
        for v in c["columns"].values():
            if v not in ("continuous", "categorical"):
                raise ValidationError(f"column kind must be continuous or categorical, got {v!r}")
        known = set(c["columns"])
        for v in c["overrides"]:
            if v not in known:
                raise ValidationError(f"override names unknown variable {v!r}")
        bad = set(c["forest"]) - {f.name for f in fields(ForestParams)}
        if bad:
            raise ValidationError(f"unknown forest parameters: {sorted(bad)}")
        if c["horizon"] is not None and any(t > c["horizon"] for t in c["eval_times"]):
            raise ValidationError("evaluation times must not exceed the horizon")
        if list(c["strata"]) != sorted(set(c["strata"])):
            raise ValidationError("strata edges must be strictly increasing")

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def out_dir(self) -> Path:
        return Path(self.raw["out_dir"])

    @property
    def workers(self) -> int:
        return int(self.raw["workers"])

    def hash(self) -> str:
        payload = {k: v for k, v in self.raw.items() if k not in _UNHASHED}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    def split_spec(self) -> SplitSpec:
        s = self.raw["split"]
        seed = child_seed(self.seed, _SPLIT) if s.get("seed") is None else int(s["seed"])
        return SplitSpec(tuple(s["ratios"]), seed)

    def forest_params(self) -> ForestParams:
        kw = dict(self.raw["forest"])
        kw.setdefault("seed", child_seed(self.seed, _FOREST))
        return ForestParams(**kw)

    @property
    def bootstrap_seed(self) -> int:
        return child_seed(self.seed, _BOOTSTRAP)

    def tag(self) -> str:
        return f"config_hash={self.hash()} seed={self.seed}"


@contextlib.contextmanager
def stage(name: str):
    """Prefix library errors with the pipeline stage that raised them."""
    try:
        yield
    except SurvScoreError as exc:
        raise type(exc)(f"[{name}] {exc}") from exc


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _update_provenance(cfg: PipelineConfig, section: str, info: dict):
    path = cfg.out_dir / "provenance.json"
    prov = json.loads(path.read_text()) if path.exists() else {}
    prov.update({"config_hash": cfg.hash(), "seed": cfg.seed, "version": __version__,
                 "config": {k: v for k, v in cfg.raw.items() if k not in _UNHASHED}})
    prov.setdefault("commands", {})[section] = info
    _dump_json(prov, path)


def load_splits(cfg: PipelineConfig):
    if not cfg["data"]:
        raise ValidationError("config needs a 'data' path")
    if not cfg["columns"]:
        raise ValidationError("config needs a non-empty 'columns' map")
    with stage("data"):
        ds = load_dataset(cfg["data"], cfg["time_col"], cfg["status_col"], cfg["columns"], cfg["missing_policy"])
        return split_dataset(ds, cfg.split_spec())


def cmd_rank(cfg: PipelineConfig, splits=None) -> VariableRanking:
    train = (splits or load_splits(cfg))[0]
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    with stage("variable ranking"):
        forest = grow_forest(train, cfg.forest_params(), cfg.workers)
        ranking = permutation_importance(forest, cfg.workers)
    ranking.to_csv(cfg.out_dir / "ranking.csv", cfg.tag())
    _update_provenance(cfg, "rank", {"train_fingerprint": train.fingerprint(), "n_train": train.n,
                                     "oob_error": ranking.oob_error})
    return ranking


def cmd_derive(cfg: PipelineConfig, splits=None):
    """Ranking, parsimony sweep, model-size choice, cut-off overrides; writes the card."""
    splits = splits or load_splits(cfg)
    train, validation, _ = splits
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    if cfg["ranking"]:
        ranking = VariableRanking.from_csv(cfg["ranking"])
    else:
        ranking = cmd_rank(cfg, splits)
    p = len(ranking)
    m_max = cfg["m_max"] or min(p, 20)
    sel = cfg["selection"]
    if sel.get("m") is not None and not 1 <= int(sel["m"]) <= p:
        raise ValidationError(f"m={sel['m']} outside 1..{p}")
    m_max = max(m_max, int(sel["m"] or 0))
    with stage("parsimony sweep"):
        table = run_parsimony(train, validation, ranking, m_max, cfg["quantiles"], cfg["horizon"], cfg.workers)
        elbow = select_m(table, "elbow", epsilon=sel.get("epsilon", 0.005))
        if sel["policy"] == "manual" and sel.get("m") is None:
            log.warning("no model size given; using the elbow suggestion m=%d", elbow)
            m = elbow
        elif sel["policy"] == "manual":
            m = select_m(table, "manual", int(sel["m"]))
        else:
            m = select_m(table, sel["policy"], epsilon=sel.get("epsilon", 0.005))
    log.info("elbow suggestion: m=%d; selected m=%d", elbow, m)
    table = with_selection(table, m)
    table.to_csv(cfg.out_dir / "parsimony.csv", cfg.tag())

    variables = ranking.top(m)
    prov = {"config_hash": cfg.hash(), "seed": cfg.seed, "m": m, "training_fingerprint": train.fingerprint()}
    with stage("score derivation"):
        cutoffs = derive_cutoffs(train, variables, cfg["quantiles"])
        card = normalize_scorecard(derive_scores(train, variables, cutoffs, prov))
    overrides = {v: o for v, o in cfg["overrides"].items() if v in variables}
    if overrides:
        with stage("cut-off fine-tuning"):
            card = fine_tune(card, overrides, train)
    card.to_csv(cfg.out_dir / "scorecard.csv", cfg.tag())
    card.to_json(cfg.out_dir / "scorecard.json")
    _update_provenance(cfg, "derive", {"m": m, "elbow_m": elbow, "variables": variables})
    return card, table


def _strata_labels(edges):
    e = [fmt_number(x) for x in edges]
    labels = [f"<={e[0]}"] + [f"({a},{b}]" for a, b in zip(e, e[1:])] + [f">{e[-1]}"]
    slugs = [f"le{e[0]}"] + [f"{a}_{b}" for a, b in zip(e, e[1:])] + [f"gt{e[-1]}"]
    return labels, slugs


def risk_strata(scores, times, status, edges=DEFAULT_STRATA, eval_times=(), horizon=None):
    """Per score interval: share of patients, KM percentiles and survival at eval times."""
    scores = np.asarray(scores, dtype=float)
    edges = list(edges)
    labels, slugs = _strata_labels(edges)
    which = np.searchsorted(np.asarray(edges, dtype=float), scores, side="left")
    if horizon is None:
        horizon = float(np.max(times))
    beyond = f"{fmt_number(horizon)}+"
    rows, curves, groups = [], {}, []
    for k, (label, slug) in enumerate(zip(labels, slugs)):
        mask = which == k
        row = {"interval": label, "n": int(mask.sum()), "percent": 100.0 * mask.sum() / scores.size}
        if mask.any():
            km = km_fit(times[mask], status[mask])
            curves[slug] = km
            groups.append((times[mask], status[mask]))
            for q, key in ((0.10, "p10"), (0.25, "p25"), (0.50, "median")):
                t = km_percentile(km, q)
                row[key] = beyond if t is None or t > horizon else fmt_number(t)
            for t in eval_times:
                row[f"surv_{fmt_number(t)}"] = 100.0 * km.survival(t)
        rows.append(row)
    lr = None
    if len(groups) >= 2 and any(np.any(s) for _, s in groups):
        res = logrank_test(groups)
        lr = {"statistic": res.statistic, "p_value": res.p_value, "df": res.df}
    return rows, curves, lr


def cmd_evaluate(cfg: PipelineConfig, card: ScoreCard, splits=None):
    """Score the test split and report metrics, risk strata and KM curves."""
    test = (splits or load_splits(cfg))[2]
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    with stage("evaluation"):
        scores = card.score_dataset(test)
        report = evaluate_metrics(scores, test.times, test.status, cfg["eval_times"], cfg["horizon"],
                                  cfg["bootstrap"]["B"], cfg["bootstrap"]["level"], cfg.bootstrap_seed,
                                  tie_policy=cfg["tie_policy"], m=len(card.variables))
        rows, curves, lr = risk_strata(scores, test.times, test.status, cfg["strata"], cfg["eval_times"],
                                       report.horizon)
    summary = summarize(test)
    payload = report.to_dict()
    payload.update({"config_hash": cfg.hash(), "seed": cfg.seed, "risk_strata_logrank": lr,
                    "median_survival_among_events": summary.median_survival_among_events})
    _dump_json(payload, cfg.out_dir / "metrics.json")

    cols = ["interval", "n", "percent", "p10", "p25", "median"] + [f"surv_{fmt_number(t)}" for t in cfg["eval_times"]]
    with (cfg.out_dir / "strata.csv").open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {cfg.tag()}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in cols])
    for slug, km in curves.items():
        write_km_csv(km, cfg.out_dir / f"km_{slug}.csv", cfg.tag())
    _update_provenance(cfg, "evaluate", {"test_fingerprint": test.fingerprint(), "n_test": test.n})
    return report, rows, lr


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.4f}"
    return v


def cmd_score(card: ScoreCard, patients_csv, out_csv) -> np.ndarray:
    """One integer score per patient row."""
    with Path(patients_csv).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        rows = list(reader)
        header = reader.fieldnames or []
    missing = [v for v in card.variables if v not in header]
    if missing:
        raise ValidationError(f"patients file lacks variables {missing}")
    scores = []
    for i, r in enumerate(rows):
        x = {}
        for v in card.variables:
            cell = r[v].strip()
            if cell == "":
                raise ValidationError(f"row {i}: missing value for {v!r}")
            if card.cutoffs[v].kind == CONTINUOUS:
                try:
                    x[v] = float(cell)
                except ValueError:
                    raise ValidationError(f"row {i}: {v!r} value {cell!r} is not a number") from None
                if not math.isfinite(x[v]):
                    raise ValidationError(f"row {i}: {v!r} value {cell!r} is not finite")
            else:
                x[v] = cell
        try:
            scores.append(card.score_patient(x))
        except ValidationError as exc:
            raise ValidationError(f"row {i}: {exc}") from None
    prov = card.provenance
    with Path(out_csv).open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_hash={prov.get('config_hash', 'none')} seed={prov.get('seed', 'none')}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "score"])
        for i, s in enumerate(scores):
            w.writerow([i, s])
    return np.array(scores, dtype=np.int64)


def cmd_synth(spec: SynthSpec | dict, out_csv) -> dict:
    if isinstance(spec, dict):
        spec = SynthSpec.from_dict(spec)
    Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
    return write_synth(spec, out_csv)


def run_all(cfg: PipelineConfig):
    """rank + derive + evaluate on one set of splits."""
    splits = load_splits(cfg)
    card, table = cmd_derive(cfg, splits)
    report, rows, lr = cmd_evaluate(cfg, card, splits)
    return card, table, report
