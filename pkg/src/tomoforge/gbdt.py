"""Second-order gradient-boosted regression trees.

Trees are grown level by level with exact greedy split search: each feature
is scanned once per level in presorted order while per-node gradient and
hessian prefix sums are accumulated, so every distinct threshold of every
open node is scored. Thresholds are midpoints between consecutive distinct
values and rows with ``x < threshold`` go left.

Split gain (no L1 term)::

    0.5 * (GL**2 / (HL + lam) + GR**2 / (HR + lam) - G**2 / (H + lam))

Leaf weight::

    -soft_threshold(G, alpha) / (H + lam)

Ties in gain go to the lower feature index, then the lower threshold.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numba
import numpy as np

from .errors import ConfigError, Divergence, SchemaError

# Splits must beat this gain; keeps round-off from splitting constant targets.
MIN_GAIN = 1e-12


@dataclass(frozen=True)
class BoostParams:
    max_depth: int = 9
    min_child_weight: float = 6.0
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    lambda_l2: float = 0.0
    alpha_l1: float = 0.4
    eta: float = 0.1
    rounds: int = 2000
    early_stop_rounds: int | None = 10
    seed: int = 0

    def __post_init__(self):
        if self.max_depth < 0:
            raise ConfigError("max_depth must be >= 0")
        if self.min_child_weight < 0:
            raise ConfigError("min_child_weight must be >= 0")
        if not 0 < self.subsample <= 1:
            raise ConfigError("subsample must be in (0, 1]")
        if not 0 < self.colsample_bytree <= 1:
            raise ConfigError("colsample_bytree must be in (0, 1]")
        if self.lambda_l2 < 0 or self.alpha_l1 < 0:
            raise ConfigError("lambda_l2 and alpha_l1 must be >= 0")
        if self.eta < 0:
            raise ConfigError("eta must be >= 0")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.early_stop_rounds is not None and self.early_stop_rounds < 1:
            raise ConfigError("early_stop_rounds must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class Tree:
    """Flat binary tree; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _predict_tree(X, self.feature, self.threshold, self.left, self.right, self.value)

    def scaled(self, factor: float) -> "Tree":
        return replace(self, value=self.value * factor)

    def to_dict(self):
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(), "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["feature"], dtype=np.int64), np.asarray(d["threshold"], dtype=float),
                   np.asarray(d["left"], dtype=np.int64), np.asarray(d["right"], dtype=np.int64),
                   np.asarray(d["value"], dtype=float))


# ---------------------------------------------------------------- kernels

@numba.njit(cache=True)
def _soft(g, alpha):
    if g > alpha:
        return g - alpha
    if g < -alpha:
        return g + alpha
    return 0.0


@numba.njit(cache=True)
def _grow(X, order, xsorted, grad, hess, row_in, features, max_depth, mcw, lam, alpha, min_gain):
    n, d = X.shape
    cap = 2 ** (max_depth + 1) - 1 if max_depth < 20 else 2 * n + 1
    feat = -np.ones(cap, np.int64)
    thr = np.zeros(cap)
    left = -np.ones(cap, np.int64)
    right = -np.ones(cap, np.int64)
    val = np.zeros(cap)
    node_of = np.empty(n, np.int64)
    G = np.zeros(cap)
    H = np.zeros(cap)
    for r in range(n):
        node_of[r] = 0 if row_in[r] else -1
        if row_in[r]:
            G[0] += grad[r]
            H[0] += hess[r]

    # gradients laid out in each candidate feature's sort order
    nf = features.size
    gs = np.empty((nf, n))
    hs = np.empty((nf, n))
    for fi in range(nf):
        f = features[fi]
        for t in range(n):
            r = order[f, t]
            gs[fi, t] = grad[r]
            hs[fi, t] = hess[r]

    slot_of = np.empty(n, np.int32)
    n_nodes = 1
    level = np.zeros(1, np.int64)
    for depth in range(max_depth + 1):
        m = level.size
        if m == 0:
            break
        slot = -np.ones(cap, np.int64)
        for s in range(m):
            slot[level[s]] = s
        best_gain = np.full(m, min_gain)
        best_feat = -np.ones(m, np.int64)
        best_thr = np.zeros(m)
        if depth < max_depth:
            for r in range(n):
                nd = node_of[r]
                slot_of[r] = -1 if nd < 0 else slot[nd]
            Gs = np.empty(m)
            Hs = np.empty(m)
            parent = np.empty(m)
            for s in range(m):
                Gs[s] = G[level[s]]
                Hs[s] = H[level[s]]
                parent[s] = Gs[s] * Gs[s] / (Hs[s] + lam)
            GL = np.zeros(m)
            HL = np.zeros(m)
            last = np.zeros(m)
            seen = np.zeros(m, np.bool_)
            for fi in range(nf):
                f = features[fi]
                GL[:] = 0.0
                HL[:] = 0.0
                seen[:] = False
                for t in range(n):
                    s = slot_of[order[f, t]]
                    if s < 0:
                        continue
                    v = xsorted[f, t]
                    if seen[s] and v != last[s]:
                        hl = HL[s]
                        hr = Hs[s] - hl
                        if hl >= mcw and hr >= mcw and hl + lam > 0 and hr + lam > 0:
                            gl = GL[s]
                            gr = Gs[s] - gl
                            a = hl + lam
                            b = hr + lam
                            gain = 0.5 * ((gl * gl * b + gr * gr * a) / (a * b) - parent[s])
                            if gain > best_gain[s]:
                                best_gain[s] = gain
                                best_feat[s] = f
                                cut = 0.5 * (last[s] + v)
                                if cut <= last[s]:
                                    cut = v
                                best_thr[s] = cut
                    GL[s] += gs[fi, t]
                    HL[s] += hs[fi, t]
                    last[s] = v
                    seen[s] = True
        # materialize children
        n_split = 0
        for s in range(m):
            if best_feat[s] >= 0:
                n_split += 1
        nxt = np.empty(2 * n_split, np.int64)
        k = 0
        for s in range(m):
            nd = level[s]
            if best_feat[s] < 0:
                val[nd] = -_soft(G[nd], alpha) / (H[nd] + lam) if H[nd] + lam > 0 else 0.0
                continue
            feat[nd] = best_feat[s]
            thr[nd] = best_thr[s]
            left[nd] = n_nodes
            right[nd] = n_nodes + 1
            nxt[k] = n_nodes
            nxt[k + 1] = n_nodes + 1
            k += 2
            n_nodes += 2
        if n_split == 0:
            break
        for r in range(n):
            nd = node_of[r]
            if nd < 0:
                continue
            if feat[nd] < 0 or slot[nd] < 0:
                node_of[r] = -1  # settled in a leaf
                continue
            child = left[nd] if X[r, feat[nd]] < thr[nd] else right[nd]
            node_of[r] = child
            G[child] += grad[r]
            H[child] += hess[r]
        level = nxt
    return feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes], val[:n_nodes]


@numba.njit(cache=True)
def _predict_tree(X, feat, thr, left, right, val):
    n = X.shape[0]
    out = np.empty(n)
    for r in range(n):
        nd = 0
        while feat[nd] >= 0:
            nd = left[nd] if X[r, feat[nd]] < thr[nd] else right[nd]
        out[r] = val[nd]
    return out


# ---------------------------------------------------------------- trees

def presort(X):
    """Per-feature stable sort order and sorted values, both shaped (d, n)."""
    X = np.asarray(X, dtype=np.float64)
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    return order, np.ascontiguousarray(np.take_along_axis(X.T, order, axis=1))


def fit_tree(grad, hess, X, params: BoostParams = BoostParams(), order=None,
             row_mask=None, features=None) -> Tree:
    """Grow one regression tree on gradients and hessians.

    Parameters
    ----------
    grad, hess : array_like, shape (n,)
    X : array_like, shape (n, d)
    order : ndarray, optional
        Output of :func:`presort` for ``X``; computed when omitted.
    row_mask : bool array, optional
        Rows taking part (row subsampling).
    features : int array, optional
        Candidate split features (column subsampling), ascending.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    hess = np.ascontiguousarray(hess, dtype=np.float64)
    if grad.shape != (X.shape[0],) or hess.shape != grad.shape:
        raise ConfigError("grad and hess must have one entry per row of X")
    if np.any(hess < 0):
        raise ConfigError("hessians must be non-negative")
    order = presort(X) if order is None else order
    row_mask = np.ones(X.shape[0], bool) if row_mask is None else np.asarray(row_mask, bool)
    features = np.arange(X.shape[1]) if features is None else np.sort(np.asarray(features))
    out = _grow(X, order[0], order[1], grad, hess, row_mask, features.astype(np.int64), int(params.max_depth),
                float(params.min_child_weight), float(params.lambda_l2), float(params.alpha_l1),
                MIN_GAIN)
    return Tree(*out)


# ---------------------------------------------------------------- boosting

@dataclass
class Booster:
    base_score: float
    trees: list
    params: BoostParams
    best_iteration: int = -1
    history: dict = field(default_factory=dict)

    @property
    def n_rounds(self) -> int:
        return len(self.trees)

    def predict(self, X, n_trees: int | None = None) -> np.ndarray:
        """Sum of the (already eta-scaled) trees up to the best iteration."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        if n_trees is None:
            n_trees = self.best_iteration + 1 if self.best_iteration >= 0 else len(self.trees)
        out = np.full(X.shape[0], self.base_score)
        for t in self.trees[:n_trees]:
            out += t.predict(X)
        return out

    def to_dict(self):
        return {"base_score": self.base_score, "best_iteration": self.best_iteration,
                "params": self.params.to_dict(), "history": self.history,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["base_score"]), [Tree.from_dict(t) for t in d["trees"]],
                   BoostParams(**d["params"]), int(d["best_iteration"]), d.get("history", {}))


def _rmse(a, b):
    return float(np.sqrt(np.mean((a - b) ** 2)))


def boost(X, y, val=None, params: BoostParams = BoostParams(), order=None) -> Booster:
    """Squared-error boosting with shrinkage ``eta`` and optional early stopping.

    With ``val = (X_val, y_val)`` training halts once the validation RMSE has
    not improved for ``early_stop_rounds`` rounds; the booster keeps every
    tree but predicts with the best round. Trees store eta-scaled leaves.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ConfigError("X and y must be nonempty with matching rows")
    order = presort(X) if order is None else order
    n, d = X.shape
    rng = np.random.default_rng(params.seed)
    base = float(np.mean(y))
    pred = np.full(n, base)
    hess = np.ones(n)
    if val is not None:
        Xv = np.ascontiguousarray(val[0], dtype=np.float64)
        yv = np.asarray(val[1], dtype=np.float64)
        pv = np.full(Xv.shape[0], base)
    trees, train_hist, val_hist = [], [], []
    best, best_it = np.inf, -1
    n_col = max(1, int(round(params.colsample_bytree * d)))
    for it in range(params.rounds):
        grad = pred - y
        rows = None
        if params.subsample < 1.0:
            rows = rng.random(n) < params.subsample
        feats = None
        if n_col < d:
            feats = np.sort(rng.choice(d, n_col, replace=False))
        tree = fit_tree(grad, hess, X, params, order, rows, feats).scaled(params.eta)
        trees.append(tree)
        pred = pred + tree.predict(X)
        tr = _rmse(pred, y)
        if not np.isfinite(tr):
            raise Divergence(f"non-finite training loss at round {it}")
        train_hist.append(tr)
        if val is None:
            continue
        pv = pv + tree.predict(Xv)
        vr = _rmse(pv, yv)
        val_hist.append(vr)
        if vr < best:
            best, best_it = vr, it
        elif params.early_stop_rounds is not None and it - best_it >= params.early_stop_rounds:
            break
    hist = {"train_rmse": train_hist, "val_rmse": val_hist}
    return Booster(base, trees, params, best_it if val is not None else len(trees) - 1, hist)


# ---------------------------------------------------------------- 16 targets

@dataclass
class MultiBooster:
    boosters: list

    @property
    def n_outputs(self) -> int:
        return len(self.boosters)

    def predict(self, X) -> np.ndarray:
        return predict_multi(self, X)

    def save(self, path):
        Path(path).write_text(json.dumps({"schema": "tomoforge.multibooster", "version": 1,
                                          "boosters": [b.to_dict() for b in self.boosters]}))

    @classmethod
    def load(cls, path) -> "MultiBooster":
        d = json.loads(Path(path).read_text())
        if d.get("schema") != "tomoforge.multibooster":
            raise SchemaError(f"{path}: not a multibooster file")
        return cls([Booster.from_dict(b) for b in d["boosters"]])


def fit_multi(X, Y, params: BoostParams = BoostParams(), val=None, n_outputs: int | None = 16,
              log=None) -> MultiBooster:
    """One independent booster per column of ``Y`` with shared parameters."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or (n_outputs is not None and Y.shape[1] != n_outputs):
        raise ConfigError(f"Y must have {n_outputs} columns, got shape {Y.shape}")
    X = np.ascontiguousarray(X, dtype=np.float64)
    order = presort(X)
    boosters = []
    for j in range(Y.shape[1]):
        v = None if val is None else (val[0], np.asarray(val[1])[:, j])
        b = boost(X, Y[:, j], v, params, order)
        if log is not None:
            log(f"target {j}: {b.n_rounds} rounds, best {b.best_iteration + 1}")
        boosters.append(b)
    return MultiBooster(boosters)


def predict_multi(model: MultiBooster, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    return np.column_stack([b.predict(X) for b in model.boosters])


# ---------------------------------------------------------------- CV search

def kfold_indices(n: int, k: int = 5, seed: int = 0) -> list[np.ndarray]:
    """Shuffled partition of ``range(n)`` into ``k`` holdout folds."""
    if not 2 <= k <= n:
        raise ConfigError(f"k must be in [2, n], got {k}")
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, k)


def cv_score(X, y, params: BoostParams, k=5, seed=0) -> float:
    """Mean holdout RMSE over k folds (averaged across columns for 2-D ``y``)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=float)
    Y = y[:, None] if y.ndim == 1 else y
    scores = []
    for hold in kfold_indices(X.shape[0], k, seed):
        keep = np.ones(X.shape[0], bool)
        keep[hold] = False
        Xt, Xh = X[keep], X[hold]
        order = presort(Xt)
        for j in range(Y.shape[1]):
            b = boost(Xt, Y[keep, j], (Xh, Y[hold, j]), params, order)
            scores.append(_rmse(b.predict(Xh), Y[hold, j]))
    return float(np.mean(scores))


def _grid_points(grid: dict):
    if not grid:
        raise ConfigError("grid must be nonempty")
    keys = list(grid)
    for values in itertools.product(*(grid[k] for k in keys)):
        yield dict(zip(keys, values))


def grid_search_cv(X, y, grid: dict, base: BoostParams = BoostParams(), k=5, seed=0):
    """Exhaustive search over ``grid`` (name -> list of values).

    Returns ``(best_params, best_score, table)`` where ``table`` lists
    ``(point, mean holdout RMSE)`` in grid order. Ties keep the earlier point.
    """
    table = []
    best, best_score = None, np.inf
    for point in _grid_points(grid):
        params = replace(base, **point)
        score = cv_score(X, y, params, k, seed)
        table.append((point, score))
        if score < best_score:
            best, best_score = params, score
    return best, best_score, table


DEFAULT_STAGES = (
    {"max_depth": [6, 9, 12], "min_child_weight": [4, 6, 8]},
    {"subsample": [0.8, 1.0], "colsample_bytree": [0.8, 1.0]},
    {"lambda_l2": [0.0, 1.0], "alpha_l1": [0.0, 0.4]},
    {"eta": [0.05, 0.1, 0.3]},
)


def staged_search(X, y, stages=DEFAULT_STAGES, base: BoostParams = BoostParams(), k=5, seed=0):
    """Run grids one after another, carrying each stage's winner forward."""
    log = []
    params = base
    for grid in stages:
        params, score, table = grid_search_cv(X, y, grid, params, k, seed)
        log.append({"grid": grid, "best": {key: getattr(params, key) for key in grid},
                    "score": score, "table": table})
    return params, log
