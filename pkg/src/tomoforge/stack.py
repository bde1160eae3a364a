"""Linear pooling of three tau regressors (Conv1D, Conv2D, GBDT).

The default meta-model has one shared weight per base model, fitted by
least squares over all 16 tau columns at once. A per-element variant fits
three weights for each tau column, and either variant can add a per-column
intercept.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, RankDeficient, SchemaError, SplitLeak

N_MODELS = 3
N_TAU = 16
MODEL_NAMES = ("conv1d", "conv2d", "gbdt")


@dataclass
class MetaModel:
    weights: np.ndarray  # (3,) shared or (16, 3) per element
    intercept: np.ndarray | None = None  # (16,)
    per_element: bool = False
    rank_deficient: bool = False

    def to_dict(self):
        return {"schema": "tomoforge.meta", "version": 1, "weights": self.weights.tolist(),
                "intercept": None if self.intercept is None else self.intercept.tolist(),
                "per_element": self.per_element, "rank_deficient": self.rank_deficient,
                "models": list(MODEL_NAMES)}

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != "tomoforge.meta":
            raise SchemaError("not a meta-model document")
        icpt = d.get("intercept")
        return cls(np.asarray(d["weights"], dtype=float),
                   None if icpt is None else np.asarray(icpt, dtype=float),
                   bool(d["per_element"]), bool(d.get("rank_deficient", False)))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def stack_predictions(p1, p2, p3) -> np.ndarray:
    """Concatenate three (n, 16) predictions into the (n, 48) meta input."""
    return np.hstack([np.asarray(p, dtype=float) for p in (p1, p2, p3)])


def _blocks(preds):
    preds = np.asarray(preds, dtype=float)
    if preds.ndim != 2 or preds.shape[1] != N_MODELS * N_TAU:
        raise ConfigError(f"meta input must be (n, 48), got {preds.shape}")
    return [preds[:, m * N_TAU:(m + 1) * N_TAU] for m in range(N_MODELS)]


def _lstsq(A, b):
    coef, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    return coef, rank


def fit_meta(preds, Y, split=None, per_element: bool = False, intercept: bool = False) -> MetaModel:
    """Least-squares pooling weights from held-out predictions.

    Parameters
    ----------
    preds : array_like, shape (n, 48)
        Conv1D, Conv2D and GBDT tau predictions side by side.
    Y : array_like, shape (n, 16)
        True tau vectors.
    split : array_like of str, optional
        Split tag of each row; any ``"train"`` row raises :class:`SplitLeak`.
    per_element : bool
        Fit 3 weights per tau column instead of 3 shared weights.
    intercept : bool
        Add one intercept per tau column.

    Collinear predictions emit a :class:`RankDeficient` warning and fall
    back to equal weights of 1/3 (and zero intercepts).
    """
    if split is not None and np.any(np.asarray(split) == "train"):
        raise SplitLeak("meta-model must be fitted on held-out predictions only")
    blocks = _blocks(preds)
    Y = np.asarray(Y, dtype=float)
    n = Y.shape[0]
    if Y.shape != (blocks[0].shape[0], N_TAU) or n == 0:
        raise ConfigError(f"Y must be (n, 16) matching preds, got {Y.shape}")

    def fallback():
        warnings.warn("stacked predictions are collinear; using equal weights", RankDeficient,
                      stacklevel=3)
        w = np.full((N_TAU, N_MODELS) if per_element else N_MODELS, 1.0 / N_MODELS)
        return MetaModel(w, np.zeros(N_TAU) if intercept else None, per_element, True)

    if not per_element:
        A = np.column_stack([b.ravel() for b in blocks])
        if intercept:
            A = np.hstack([A, np.tile(np.eye(N_TAU), (n, 1))])
        coef, rank = _lstsq(A, Y.ravel())
        if rank < A.shape[1]:
            return fallback()
        return MetaModel(coef[:N_MODELS], coef[N_MODELS:] if intercept else None, False)

    W = np.empty((N_TAU, N_MODELS))
    icpt = np.zeros(N_TAU)
    for j in range(N_TAU):
        A = np.column_stack([b[:, j] for b in blocks])
        if intercept:
            A = np.hstack([A, np.ones((n, 1))])
        coef, rank = _lstsq(A, Y[:, j])
        if rank < A.shape[1]:
            return fallback()
        W[j] = coef[:N_MODELS]
        if intercept:
            icpt[j] = coef[N_MODELS]
    return MetaModel(W, icpt if intercept else None, True)


def pool(p1, p2, p3, m: MetaModel) -> np.ndarray:
    """Weighted sum ``w1*p1 + w2*p2 + w3*p3`` (+ intercepts), elementwise over tau."""
    P = [np.asarray(p, dtype=float) for p in (p1, p2, p3)]
    if m.per_element:
        out = sum(P[k] * m.weights[:, k] for k in range(N_MODELS))
    else:
        out = sum(P[k] * m.weights[k] for k in range(N_MODELS))
    if m.intercept is not None:
        out = out + m.intercept
    return out
