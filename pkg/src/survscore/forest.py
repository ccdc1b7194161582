"""Random survival forest with log-rank splitting, used to rank variables.

Trees store one Nelson-Aalen cumulative hazard per leaf. Variables are ranked
by out-of-bag permutation importance, where a tree's error is one minus the
concordance of its predicted mortality on the rows it did not see.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from joblib import Parallel, delayed

from .data import CATEGORICAL, SurvivalDataset
from .errors import RoutingError, ValidationError
from .metrics import concordance_counts
from .nonparametric import StepFunction

_MASK64 = (1 << 64) - 1
# splitmix64 increment; per-tree seeds are splitmix64(master + (index + 1) * _GOLDEN)
_GOLDEN = 0x9E3779B97F4A7C15


def tree_seed(master_seed: int, index: int) -> int:
    z = (int(master_seed) + (index + 1) * _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 500
    mtry: int | None = None
    min_node_size: int = 15
    min_node_events: int = 3
    max_depth: int | None = None
    seed: int = 0
    max_candidate_cuts: int | None = None
    bootstrap: bool = True
    allow_unseen_labels: bool = False

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValidationError("n_trees must be >= 1")
        if self.min_node_size < 1 or self.min_node_events < 1:
            raise ValidationError("min_node_size and min_node_events must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValidationError("max_depth must be >= 0")
        if self.max_candidate_cuts is not None and self.max_candidate_cuts < 1:
            raise ValidationError("max_candidate_cuts must be >= 1")

    def resolved_mtry(self, p: int) -> int:
        m = int(math.floor(math.sqrt(p))) if self.mtry is None else int(self.mtry)
        if not 1 <= m <= p:
            raise ValidationError(f"mtry must lie in [1, {p}], got {m}")
        return m


@dataclass(frozen=True)
class Split:
    variable: int
    threshold: float  # cut point, or label code for categorical variables
    statistic: float
    categorical: bool


@dataclass(eq=False)
class SurvivalTree:
    """Flat binary tree. ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    is_categorical: np.ndarray
    left: np.ndarray
    right: np.ndarray
    majority_left: np.ndarray
    statistic: np.ndarray
    leaf_index: np.ndarray
    leaf_knots: np.ndarray  # leaf cumulative hazards, concatenated
    leaf_values: np.ndarray
    leaf_offsets: np.ndarray  # leaf j owns knots[leaf_offsets[j]:leaf_offsets[j + 1]]
    leaf_mortality: np.ndarray
    inbag_counts: np.ndarray
    seed: int

    @property
    def n_leaves(self) -> int:
        return self.leaf_offsets.size - 1

    def leaf_chf(self, j: int) -> StepFunction:
        lo, hi = self.leaf_offsets[j], self.leaf_offsets[j + 1]
        return StepFunction(self.leaf_knots[lo:hi], self.leaf_values[lo:hi], 0.0)

    @property
    def oob_rows(self) -> np.ndarray:
        return np.flatnonzero(self.inbag_counts == 0)

    @property
    def used_features(self) -> np.ndarray:
        return np.unique(self.feature[self.feature >= 0])

    def apply(self, codes: np.ndarray) -> np.ndarray:
        """Leaf number reached by each row of an encoded covariate matrix."""
        nodes = _route(codes, self.feature, self.threshold, self.is_categorical,
                       self.left, self.right, self.majority_left)
        return self.leaf_index[nodes]

    def to_dict(self, names) -> dict:
        nodes = []
        for i in range(self.feature.size):
            if self.feature[i] < 0:
                chf = self.leaf_chf(self.leaf_index[i])
                nodes.append({"leaf": int(self.leaf_index[i]), "times": chf.knots.tolist(),
                              "chf": chf.values.tolist()})
            else:
                nodes.append({"variable": names[self.feature[i]], "threshold": float(self.threshold[i]),
                              "categorical": bool(self.is_categorical[i]), "left": int(self.left[i]),
                              "right": int(self.right[i]), "logrank": float(self.statistic[i])})
        return {"seed": int(self.seed), "nodes": nodes}


@dataclass(eq=False)
class SurvivalForest:
    trees: list
    params: ForestParams
    variable_names: list
    categorical_labels: dict  # variable name -> sorted label list (code = position)
    event_times: np.ndarray  # distinct training event times
    train_codes: np.ndarray = field(repr=False)
    train_times: np.ndarray = field(repr=False)
    train_status: np.ndarray = field(repr=False)

    def encode(self, ds_or_rows) -> np.ndarray:
        """Covariate matrix with categorical labels replaced by codes.

        Labels unseen during training become -1; these raise unless the forest
        was grown with ``allow_unseen_labels``.
        """
        if isinstance(ds_or_rows, SurvivalDataset):
            cols = [ds_or_rows.covariates[v] for v in self.variable_names]
        else:
            rows = [ds_or_rows] if isinstance(ds_or_rows, dict) else list(ds_or_rows)
            try:
                cols = [np.array([r[v] for r in rows], dtype=object) for v in self.variable_names]
            except KeyError as exc:
                raise ValidationError(f"missing variable {exc.args[0]!r}") from None
        out = np.empty((len(cols[0]), len(cols)))
        for j, (name, col) in enumerate(zip(self.variable_names, cols)):
            if name in self.categorical_labels:
                lookup = {lab: k for k, lab in enumerate(self.categorical_labels[name])}
                codes = np.array([lookup.get(str(v), -1) for v in col], dtype=float)
                if not self.params.allow_unseen_labels and np.any(codes < 0):
                    bad = sorted({str(v) for v, c in zip(col, codes) if c < 0})
                    raise RoutingError(f"variable {name!r}: labels {bad} unseen while growing the forest")
                out[:, j] = codes
            else:
                out[:, j] = np.asarray(col, dtype=float)
        return out

    def to_json(self, path) -> None:
        payload = {"params": self.params.__dict__, "variables": self.variable_names,
                   "trees": [t.to_dict(self.variable_names) for t in self.trees]}
        Path(path).write_text(json.dumps(payload, indent=1))


@dataclass(frozen=True)
class VariableRanking:
    names: tuple
    importances: tuple
    oob_error: float | None = None

    def __iter__(self):
        return iter(zip(self.names, self.importances))

    def __len__(self):
        return len(self.names)

    def top(self, m: int) -> list:
        return list(self.names[:m])

    def to_csv(self, path, header_comment: str | None = None) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "variable", "importance"])
            for i, (name, imp) in enumerate(self, start=1):
                w.writerow([i, name, repr(float(imp))])

    @classmethod
    def from_csv(cls, path) -> "VariableRanking":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
        rows.sort(key=lambda r: int(r["rank"]))
        return cls(tuple(r["variable"] for r in rows), tuple(float(r["importance"]) for r in rows))


# ---------------------------------------------------------------------------
# split search


@numba.njit(cache=True, nogil=True)
def _fenwick_add(tree, i, v):
    n = tree.shape[0]
    while i < n:
        tree[i] += v
        i += i & (-i)


@numba.njit(cache=True, nogil=True)
def _fenwick_sum(tree, i):
    s = 0.0
    while i > 0:
        s += tree[i]
        i -= i & (-i)
    return s


@numba.njit(cache=True, nogil=True)
def _scan_cuts(order, x, status, rank, na, a, ccum, n_ranks, allowed, min_events, total_events):
    """Log-rank statistic of every prefix split of ``order``.

    A row with rank r is at risk at the first r node event times. Adding it to
    the left child moves the observed-minus-expected sum by status - NA(t) and
    the variance by a(t) - dS2, with S2 = sum_k c_k Y_left(k)^2 kept in two
    Fenwick trees indexed by rank. Returns (best statistic, best position);
    position -1 means no admissible cut.
    """
    n = order.shape[0]
    cnt = np.zeros(n_ranks + 2)
    csum = np.zeros(n_ranks + 2)
    u = 0.0
    s1 = 0.0
    s2 = 0.0
    events_left = 0
    best = -1.0
    best_pos = -1
    for m in range(n - 1):
        j = order[m]
        r = rank[j]
        lt_cnt = _fenwick_sum(cnt, r)
        lt_sum = _fenwick_sum(csum, r)
        s2 += ccum[r] + 2.0 * (ccum[r] * (m - lt_cnt) + lt_sum)
        _fenwick_add(cnt, r + 1, 1.0)
        _fenwick_add(csum, r + 1, ccum[r])
        s1 += a[j]
        u += status[j] - na[j]
        events_left += status[j]
        if x[order[m + 1]] == x[j] or not allowed[m]:
            continue
        if events_left < min_events or total_events - events_left < min_events:
            continue
        v = s1 - s2
        if v <= 1e-12:
            continue
        stat = u * u / v
        if stat > best:
            best = stat
            best_pos = m
    return best, best_pos


@numba.njit(cache=True, nogil=True)
def _route(codes, feature, threshold, is_cat, left, right, majority_left):
    out = np.empty(codes.shape[0], dtype=np.int64)
    for i in range(codes.shape[0]):
        node = 0
        while feature[node] >= 0:
            v = codes[i, feature[node]]
            if is_cat[node]:
                if v < 0:
                    go_left = majority_left[node]
                else:
                    go_left = v == threshold[node]
            else:
                go_left = v < threshold[node]
            node = left[node] if go_left else right[node]
        out[i] = node
    return out


@numba.njit(cache=True, nogil=True)
def _node_prep(t, s):
    """Rank of each row among the node's distinct event times plus running sums.

    Returns (rank, na, a, ccum, w, y, n_ranks): a row with rank r is at risk
    at the first r event times; na/a are the Nelson-Aalen and variance
    running sums at each row's time; ccum[r] = sum_{k<r} w_k / y_k^2.
    """
    n = t.shape[0]
    ev_all = np.empty(n)
    ne = 0
    for i in range(n):
        if s[i] == 1:
            ev_all[ne] = t[i]
            ne += 1
    ev = np.unique(ev_all[:ne])
    k = ev.shape[0]
    rank = np.searchsorted(ev, t, side="right")
    y = np.zeros(k + 1)
    d = np.zeros(k)
    for i in range(n):
        y[rank[i]] += 1.0
        if s[i] == 1:
            d[rank[i] - 1] += 1.0
    for j in range(k - 1, -1, -1):
        y[j] += y[j + 1]
    y = y[1:]
    w = np.zeros(k)
    na_cum = np.zeros(k + 1)
    a_cum = np.zeros(k + 1)
    ccum = np.zeros(k + 1)
    for j in range(k):
        if y[j] > 1:
            w[j] = d[j] * (y[j] - d[j]) / (y[j] - 1.0)
        na_cum[j + 1] = na_cum[j] + d[j] / y[j]
        a_cum[j + 1] = a_cum[j] + w[j] / y[j]
        ccum[j + 1] = ccum[j] + w[j] / (y[j] * y[j])
    return rank, na_cum[rank], a_cum[rank], ccum, w, y, k


@numba.njit(cache=True, nogil=True)
def _allowed_positions(xs, cap):
    n = xs.shape[0]
    allowed = np.ones(max(n - 1, 0), dtype=np.bool_)
    if cap <= 0:
        return allowed
    nb = 0
    for m in range(n - 1):
        if xs[m + 1] != xs[m]:
            nb += 1
    if nb <= cap:
        return allowed
    boundaries = np.empty(nb, dtype=np.int64)
    nb = 0
    for m in range(n - 1):
        if xs[m + 1] != xs[m]:
            boundaries[nb] = m
            nb += 1
    allowed[:] = False
    picks = np.round(np.linspace(0, nb - 1, cap))
    for q in picks:
        allowed[boundaries[int(q)]] = True
    return allowed


@numba.njit(cache=True, nogil=True)
def _categorical_stat(mask, status, rank, na, w, y, n_ranks):
    u = 0.0
    y_left = np.zeros(n_ranks + 1)
    for i in range(mask.shape[0]):
        if mask[i]:
            u += status[i] - na[i]
            y_left[rank[i]] += 1.0
    for j in range(n_ranks - 1, -1, -1):
        y_left[j] += y_left[j + 1]
    v = 0.0
    for j in range(n_ranks):
        f = y_left[j + 1] / y[j]
        v += w[j] * f * (1.0 - f)
    if v <= 1e-12:
        return -1.0
    return u * u / v


@numba.njit(cache=True, nogil=True)
def _node_best(x, t, s, cands, is_cat, min_events, cap):
    """Best log-rank split of one node; returns (variable, threshold, statistic).

    variable -1 means no admissible split. Candidates are visited in the given
    order and a later candidate must beat the incumbent strictly.
    """
    rank, na, a, ccum, w, y, n_ranks = _node_prep(t, s)
    total_events = 0
    for i in range(s.shape[0]):
        total_events += s[i]
    best_var = -1
    best_thr = 0.0
    best = -1.0
    if total_events < 2 * min_events:
        return best_var, best_thr, best
    n = t.shape[0]
    for c in cands:
        col = x[:, c]
        if is_cat[c]:
            labs = np.unique(col)
            if labs.shape[0] < 2:
                continue
            for lab in labs:
                mask = col == lab
                ev_left = 0
                for i in range(n):
                    if mask[i]:
                        ev_left += s[i]
                if ev_left < min_events or total_events - ev_left < min_events:
                    continue
                stat = _categorical_stat(mask, s, rank, na, w, y, n_ranks)
                if stat >= 0 and stat > best:
                    best, best_var, best_thr = stat, c, lab
        else:
            order = np.argsort(col, kind="mergesort")
            xs = col[order]
            if xs[0] == xs[n - 1]:
                continue
            allowed = _allowed_positions(xs, cap)
            stat, pos = _scan_cuts(order, col, s, rank, na, a, ccum, n_ranks, allowed, min_events, total_events)
            if pos >= 0 and stat > best:
                best, best_var, best_thr = stat, c, 0.5 * (xs[pos] + xs[pos + 1])
    return best_var, best_thr, best


def best_split(codes, times, status, candidates, is_categorical, min_node_events=3, max_candidate_cuts=None):
    """Best log-rank split of one node over ``candidates`` (column indices).

    Continuous cuts are midpoints between consecutive distinct values, rows
    below the cut go left. Categorical splits send one label left and the rest
    right. Both children must hold at least ``min_node_events`` events. Ties
    keep the first candidate in column order, then the smallest cut.
    """
    codes = np.ascontiguousarray(codes, dtype=float)
    cands = np.sort(np.asarray(candidates, dtype=np.int64))
    var, thr, stat = _node_best(codes, np.asarray(times, dtype=float), np.asarray(status, dtype=np.int64),
                                cands, np.asarray(is_categorical, dtype=np.bool_), int(min_node_events),
                                int(max_candidate_cuts or 0))
    if var < 0:
        return None
    return Split(int(var), float(thr), float(stat), bool(is_categorical[var]))


# ---------------------------------------------------------------------------
# growth


@numba.njit(cache=True, nogil=True)
def _build_tree(xb, tb, sb, is_cat, rand, mtry, min_node_size, min_events, max_depth, cap, event_times):
    n, p = xb.shape
    max_nodes = 2 * n + 1
    feature = np.full(max_nodes, -1, dtype=np.int64)
    threshold = np.zeros(max_nodes)
    cat = np.zeros(max_nodes, dtype=np.bool_)
    left = np.full(max_nodes, -1, dtype=np.int64)
    right = np.full(max_nodes, -1, dtype=np.int64)
    majority = np.ones(max_nodes, dtype=np.bool_)
    stat = np.zeros(max_nodes)
    leaf_of = np.full(max_nodes, -1, dtype=np.int64)
    knots = np.empty(n)
    values = np.empty(n)
    offsets = np.zeros(max_nodes + 1, dtype=np.int64)
    mortality = np.zeros(max_nodes)
    n_leaves = 0
    n_knots = 0

    rows = np.arange(n)
    st_node = np.empty(max_nodes, dtype=np.int64)
    st_lo = np.empty(max_nodes, dtype=np.int64)
    st_hi = np.empty(max_nodes, dtype=np.int64)
    st_depth = np.empty(max_nodes, dtype=np.int64)
    top = 0
    st_node[0], st_lo[0], st_hi[0], st_depth[0] = 0, 0, n, 0
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        nid, lo, hi, depth = st_node[top], st_lo[top], st_hi[top], st_depth[top]
        idx = rows[lo:hi]
        t = tb[idx]
        s = sb[idx]
        events = 0
        for i in range(s.shape[0]):
            events += s[i]
        var = -1
        thr = 0.0
        best = 0.0
        if hi - lo >= min_node_size and events >= 2 * min_events and (max_depth < 0 or depth < max_depth):
            if mtry < p:
                cands = np.sort(np.argsort(rand[nid])[:mtry])
            else:
                cands = np.arange(p)
            var, thr, best = _node_best(xb[idx], t, s, cands, is_cat, min_events, cap)
        if var < 0:
            leaf_of[nid] = n_leaves
            if events > 0:
                rank, na, a, ccum, w, y, k = _node_prep(t, s)
                ev = np.unique(t[s == 1])
                h = 0.0
                for j in range(k):
                    d = 0.0
                    for i in range(s.shape[0]):
                        if s[i] == 1 and rank[i] == j + 1:
                            d += 1.0
                    h += d / y[j]
                    knots[n_knots] = ev[j]
                    values[n_knots] = h
                    n_knots += 1
                m = 0.0
                base = offsets[n_leaves]
                for tau in event_times:
                    pos = np.searchsorted(ev, tau, side="right") - 1
                    if pos >= 0:
                        m += values[base + pos]
                mortality[n_leaves] = m
            n_leaves += 1
            offsets[n_leaves] = n_knots
            continue
        # partition rows[lo:hi] in place, left block first, stable
        col = xb[idx, var]
        if is_cat[var]:
            go_left = col == thr
        else:
            go_left = col < thr
        n_left = 0
        for i in range(go_left.shape[0]):
            if go_left[i]:
                n_left += 1
        buf = np.empty(hi - lo, dtype=np.int64)
        a_i = 0
        b_i = n_left
        for i in range(go_left.shape[0]):
            if go_left[i]:
                buf[a_i] = idx[i]
                a_i += 1
            else:
                buf[b_i] = idx[i]
                b_i += 1
        rows[lo:hi] = buf
        feature[nid] = var
        threshold[nid] = thr
        cat[nid] = is_cat[var]
        stat[nid] = best
        majority[nid] = n_left >= (hi - lo - n_left)
        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        left[nid] = lid
        right[nid] = rid
        # right pushed first so the left subtree is expanded first
        st_node[top], st_lo[top], st_hi[top], st_depth[top] = rid, lo + n_left, hi, depth + 1
        top += 1
        st_node[top], st_lo[top], st_hi[top], st_depth[top] = lid, lo, lo + n_left, depth + 1
        top += 1
    return (feature[:n_nodes], threshold[:n_nodes], cat[:n_nodes], left[:n_nodes], right[:n_nodes],
            majority[:n_nodes], stat[:n_nodes], leaf_of[:n_nodes], knots[:n_knots], values[:n_knots],
            offsets[:n_leaves + 1], mortality[:n_leaves])


def _grow_tree(codes, times, status, is_cat, params: ForestParams, mtry, index, event_times):
    seed = tree_seed(params.seed, index)
    rng = np.random.default_rng(seed)
    n, p = codes.shape
    if params.bootstrap:
        sample = rng.integers(0, n, size=n)
    else:
        sample = np.arange(n)
    inbag = np.bincount(sample, minlength=n)
    rand = rng.random((2 * n + 1, p)) if mtry < p else np.zeros((1, p))
    out = _build_tree(codes[sample], times[sample], status[sample], is_cat, rand, mtry,
                      params.min_node_size, params.min_node_events,
                      -1 if params.max_depth is None else params.max_depth,
                      params.max_candidate_cuts or 0, event_times)
    feature, threshold, cat, left, right, majority, stat, leaf_of, knots, values, offsets, mortality = out
    return SurvivalTree(feature, threshold, cat, left, right, majority, stat, leaf_of,
                        knots, values, offsets, mortality, inbag, seed)


def _encode_training(train: SurvivalDataset):
    names = train.names
    labels = {v: train.labels(v) for v in names if train.schema[v] == CATEGORICAL}
    codes = np.empty((train.n, len(names)))
    for j, v in enumerate(names):
        col = train.covariates[v]
        if v in labels:
            lookup = {lab: k for k, lab in enumerate(labels[v])}
            codes[:, j] = [lookup[c] for c in col]
        else:
            codes[:, j] = col
    return names, labels, codes


def grow_forest(train: SurvivalDataset, params: ForestParams = ForestParams(), workers: int = 1) -> SurvivalForest:
    """Grow ``params.n_trees`` trees, each on its own bootstrap sample.

    Tree ``b`` draws all its randomness from ``tree_seed(params.seed, b)``, so
    the forest does not depend on ``workers``.
    """
    if train.n_events == 0:
        raise ValidationError("training data has no events")
    names, labels, codes = _encode_training(train)
    if not names:
        raise ValidationError("no covariates to grow a forest on")
    mtry = params.resolved_mtry(len(names))
    is_cat = np.array([v in labels for v in names], dtype=np.bool_)
    times = train.times
    status = train.status.astype(np.int64)
    event_times = np.unique(times[status == 1])
    jobs = (delayed(_grow_tree)(codes, times, status, is_cat, params, mtry, b, event_times)
            for b in range(params.n_trees))
    trees = Parallel(n_jobs=workers, prefer="threads")(jobs) if workers != 1 else [j[0](*j[1], **j[2]) for j in jobs]
    return SurvivalForest(trees, params, names, labels, event_times, codes, times, status)


# ---------------------------------------------------------------------------
# prediction


def ensemble_chf(forest: SurvivalForest, x) -> StepFunction:
    """Mean of the leaf cumulative hazards reached by covariate vector ``x``."""
    codes = forest.encode(x)
    if codes.shape[0] != 1:
        raise ValidationError("ensemble_chf takes a single covariate vector")
    chfs = [tree.leaf_chf(tree.apply(codes)[0]) for tree in forest.trees]
    knots = np.unique(np.concatenate([h.knots for h in chfs]))
    total = np.zeros(knots.size)
    for h in chfs:
        total += h(knots) if knots.size else 0.0
    return StepFunction(knots, total / len(chfs), 0.0)


def ensemble_mortality(forest: SurvivalForest, x) -> np.ndarray:
    """Ensemble cumulative hazard summed over the distinct training event times.

    Accepts one covariate mapping, a list of them, or a dataset; returns one
    value per row.
    """
    codes = forest.encode(x)
    total = np.zeros(codes.shape[0])
    for tree in forest.trees:
        total += tree.leaf_mortality[tree.apply(codes)]
    return total / len(forest.trees)


def _harrell_error(risk, times, status):
    conc, disc, tied, pairs = concordance_counts(risk, times, status)
    if pairs == 0:
        return None
    return 1.0 - (conc + 0.5 * tied) / pairs


def _tree_importance(forest: SurvivalForest, b: int):
    tree = forest.trees[b]
    oob = tree.oob_rows
    p = len(forest.variable_names)
    diffs = np.zeros(p)
    if oob.size < 2:
        return diffs, False
    codes = forest.train_codes[oob]
    t = forest.train_times[oob]
    s = forest.train_status[oob]
    base = _harrell_error(tree.leaf_mortality[tree.apply(codes)], t, s)
    if base is None:
        return diffs, False
    for v in tree.used_features:
        rng = np.random.default_rng((tree.seed, int(v) + 1))
        permuted = codes.copy()
        permuted[:, v] = codes[rng.permutation(oob.size), v]
        err = _harrell_error(tree.leaf_mortality[tree.apply(permuted)], t, s)
        diffs[v] = err - base
    return diffs, True


def oob_mortality(forest: SurvivalForest) -> np.ndarray:
    """Per training row, mean mortality over trees where the row is out of bag (nan if never)."""
    total = np.zeros(forest.train_times.size)
    count = np.zeros(forest.train_times.size)
    for tree in forest.trees:
        oob = tree.oob_rows
        total[oob] += tree.leaf_mortality[tree.apply(forest.train_codes[oob])]
        count[oob] += 1
    with np.errstate(invalid="ignore"):
        return total / count


def permutation_importance(forest: SurvivalForest, workers: int = 1) -> VariableRanking:
    """Rank variables by mean per-tree increase in out-of-bag error after permutation.

    Each tree permutes a variable among its own out-of-bag rows. Tree error is
    1 - C-index of the tree's mortality with prediction ties counted 1/2.
    Variables a tree never splits on contribute exactly 0 for that tree.
    """
    if not forest.params.bootstrap:
        raise ValidationError("permutation importance needs out-of-bag rows; grow with bootstrap=True")
    jobs = [delayed(_tree_importance)(forest, b) for b in range(len(forest.trees))]
    if workers != 1:
        results = Parallel(n_jobs=workers, prefer="threads")(jobs)
    else:
        results = [f(*a, **k) for f, a, k in jobs]
    valid = [d for d, ok in results if ok]
    if not valid:
        raise ValidationError("no tree has usable out-of-bag rows")
    imp = np.mean(valid, axis=0)

    oob = oob_mortality(forest)
    seen = ~np.isnan(oob)
    oob_err = _harrell_error(oob[seen], forest.train_times[seen], forest.train_status[seen]) if seen.any() else None

    order = np.argsort(-imp, kind="stable")
    return VariableRanking(tuple(forest.variable_names[i] for i in order),
                           tuple(float(imp[i]) for i in order), oob_err)
