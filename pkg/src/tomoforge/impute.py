"""Chained-equation imputation of missing measurements with Bayesian ridge models.

One Bayesian ridge regression per measurement column, each predicting that
column from the other 35. Imputation starts from column means and sweeps the
columns round-robin; several stochastic chains are averaged.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AllMissingRow, DegenerateDesign


@dataclass
class BayesRidgeModel:
    coef: np.ndarray
    intercept: float
    alpha: float
    lambda_: float
    sigma: np.ndarray  # posterior covariance of coef
    x_offset: np.ndarray
    y_offset: float
    n_iter: int = 0
    hyper: tuple = (1e-6, 1e-6, 1e-6, 1e-6)

    def predict(self, X, return_std: bool = False):
        X = np.asarray(X, dtype=float)
        mean = X @ self.coef + self.intercept
        if not return_std:
            return mean
        Xc = X - self.x_offset
        var = 1.0 / self.alpha + np.einsum("ij,jk,ik->i", Xc, self.sigma, Xc)
        return mean, np.sqrt(np.maximum(var, 0.0))

    def to_dict(self) -> dict:
        return {"coef": self.coef.tolist(), "intercept": self.intercept, "alpha": self.alpha,
                "lambda": self.lambda_, "sigma": self.sigma.tolist(),
                "x_offset": self.x_offset.tolist(), "y_offset": self.y_offset,
                "n_iter": self.n_iter, "hyper": list(self.hyper)}

    @classmethod
    def from_dict(cls, d: dict) -> "BayesRidgeModel":
        return cls(np.array(d["coef"]), float(d["intercept"]), float(d["alpha"]),
                   float(d["lambda"]), np.array(d["sigma"]), np.array(d["x_offset"]),
                   float(d["y_offset"]), int(d["n_iter"]), tuple(d["hyper"]))


def fit_bayes_ridge(X, y, alpha_1=1e-6, alpha_2=1e-6, lambda_1=1e-6, lambda_2=1e-6,
                    max_iter=300, tol=1e-6) -> BayesRidgeModel:
    """Evidence-maximizing Bayesian ridge regression.

    Alternates the Gaussian weight posterior with fixed-point updates of the
    noise precision ``alpha`` and weight precision ``lambda`` (MacKay), under
    Gamma hyperpriors, until the relative change of (coef, alpha, lambda)
    drops below ``tol`` or ``max_iter`` is reached. The intercept is
    handled by centering and is not penalized.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    x_offset = X.mean(axis=0)
    y_offset = float(y.mean())
    Xc = X - x_offset
    yc = y - y_offset
    if n > 1 and np.all(Xc.std(axis=0) == 0) and p > 0:
        raise DegenerateDesign("every feature column is constant")

    U, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    eig = S ** 2
    uty = U.T @ yc
    var_y = yc.var()
    alpha = 1.0 / (var_y + np.finfo(float).eps)
    lam = 1.0
    coef = np.zeros(p)
    it = 0
    for it in range(1, max_iter + 1):
        coef_new = Vt.T @ (S / (eig + lam / alpha) * uty)
        resid = float(np.sum((yc - Xc @ coef_new) ** 2))
        gamma = float(np.sum(alpha * eig / (lam + alpha * eig)))
        lam_new = (gamma + 2.0 * lambda_1) / (float(np.sum(coef_new ** 2)) + 2.0 * lambda_2)
        alpha_new = (n - gamma + 2.0 * alpha_1) / (resid + 2.0 * alpha_2)
        d_coef = np.linalg.norm(coef_new - coef) / max(np.linalg.norm(coef_new), 1e-300)
        d_prec = max(abs(alpha_new - alpha) / alpha, abs(lam_new - lam) / lam)
        coef, alpha, lam = coef_new, alpha_new, lam_new
        if max(d_coef, d_prec) < tol:
            break
    # final posterior at the converged precisions
    coef = Vt.T @ (S / (eig + lam / alpha) * uty)
    if Vt.shape[0] == p:
        sigma = (Vt.T / (alpha * eig + lam)) @ Vt
    else:
        sigma = np.linalg.inv(alpha * Xc.T @ Xc + lam * np.eye(p))
    intercept = y_offset - float(x_offset @ coef)
    return BayesRidgeModel(coef, intercept, float(alpha), float(lam), sigma, x_offset, y_offset,
                           it, (alpha_1, alpha_2, lambda_1, lambda_2))


@dataclass
class ImputerModel:
    """One Bayesian ridge model per column plus the column means."""

    models: list
    means: np.ndarray
    n_iterations: int = 15
    n_seeds: int = 4
    order: list | None = None
    config: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.models)

    def column_order(self) -> list[int]:
        return list(range(self.n_features)) if self.order is None else list(self.order)

    def save(self, path) -> None:
        payload = {"schema": "tomoforge.imputer", "version": 1,
                   "means": self.means.tolist(), "n_iterations": self.n_iterations,
                   "n_seeds": self.n_seeds, "order": self.order, "config": self.config,
                   "models": [m.to_dict() for m in self.models]}
        Path(path).write_text(json.dumps(payload))

    @classmethod
    def load(cls, path) -> "ImputerModel":
        d = json.loads(Path(path).read_text())
        return cls([BayesRidgeModel.from_dict(m) for m in d["models"]], np.array(d["means"]),
                   d["n_iterations"], d["n_seeds"], d["order"], d.get("config", {}))


def fit_imputer(X, n_iterations=15, n_seeds=4, order=None, **hyper) -> ImputerModel:
    """Fit the per-column regressions on complete data ``X`` (n, p)."""
    X = np.asarray(X, dtype=float)
    if np.isnan(X).any():
        raise ValueError("imputer must be fitted on complete data")
    p = X.shape[1]
    models = []
    for j in range(p):
        others = np.delete(np.arange(p), j)
        models.append(fit_bayes_ridge(X[:, others], X[:, j], **hyper))
    return ImputerModel(models, X.mean(axis=0), n_iterations, n_seeds, order,
                        {"n_train": int(X.shape[0]), **{k: float(v) for k, v in hyper.items()}})


def _check_rows(mask):
    if mask.size and np.any(mask.all(axis=1)):
        raise AllMissingRow(f"row(s) {np.flatnonzero(mask.all(axis=1))[:5].tolist()} have no observed entries")


def _column_operators(imp: ImputerModel):
    """Per column j: mean weights ``w`` (p,) and bias, plus a float32 factor
    ``L`` (p, r) and shift so that for a full-width row x the predictive
    variance is ``1/alpha + sum((x @ L - shift)**2)``."""
    p = imp.n_features
    ops = []
    for j, m in enumerate(imp.models):
        others = np.delete(np.arange(p), j)
        evals, evecs = np.linalg.eigh(m.sigma)
        L = evecs * np.sqrt(np.clip(evals, 0.0, None))
        w = np.zeros(p)
        w[others] = m.coef
        Lf = np.zeros((p, L.shape[1]), dtype=np.float32)
        Lf[others] = L
        ops.append((w, m.intercept, Lf, (m.x_offset @ L).astype(np.float32), 1.0 / m.alpha))
    return ops


def _run_chains(X_missing, imp: ImputerModel, rngs, stochastic: bool) -> list[np.ndarray]:
    X0 = np.array(X_missing, dtype=float, copy=True)
    mask = np.isnan(X0)
    _check_rows(mask)
    if not mask.any():
        return [X0.copy() for _ in rngs]
    n = X0.shape[0]
    n_chains = len(rngs)
    X0[mask] = np.broadcast_to(imp.means, X0.shape)[mask]
    X = np.tile(X0, (n_chains, 1))
    # the variance term only scales the draw, so it runs on a float32 mirror
    X32 = X.astype(np.float32) if stochastic else None
    ops = _column_operators(imp)
    cols = [j for j in imp.column_order() if mask[:, j].any()]
    rows_of = {}
    for j in cols:
        r = np.flatnonzero(mask[:, j])
        rows_of[j] = (r, (r[None, :] + n * np.arange(n_chains)[:, None]).ravel())
    for _ in range(imp.n_iterations):
        for j in cols:
            r, rr = rows_of[j]
            w, bias, L, shift, noise_var = ops[j]
            new = X[rr] @ w + bias
            if stochastic:
                z = X32[rr] @ L - shift
                sd = np.sqrt(noise_var + np.einsum("ij,ij->i", z, z, dtype=float))
                eps = np.concatenate([g.standard_normal(r.size) for g in rngs])
                new += sd * eps
                X32[rr, j] = new
            X[rr, j] = new
    return [X[c * n:(c + 1) * n] for c in range(n_chains)]


def impute_once(X_missing, imp: ImputerModel, seed=None, stochastic: bool = True) -> np.ndarray:
    """A single chain of round-robin imputation.

    Missing cells (NaN) start at the column means and are re-predicted for
    ``imp.n_iterations`` sweeps over the columns in ``imp.column_order()``.
    With ``stochastic`` each prediction is drawn from the model's Gaussian
    predictive distribution. Observed cells are returned unchanged.
    """
    return _run_chains(X_missing, imp, [np.random.default_rng(seed)], stochastic)[0]


def mice_impute(X_missing, imp: ImputerModel, seed=0, n_seeds: int | None = None,
                clip=(0.0, 1.0), return_chains: bool = False):
    """Average of ``n_seeds`` stochastic chains, clamped to ``clip`` on missing cells."""
    X_missing = np.asarray(X_missing, dtype=float)
    mask = np.isnan(X_missing)
    _check_rows(mask)
    if not mask.any():
        out = X_missing.copy()
        return (out, [out.copy()]) if return_chains else out
    n_seeds = imp.n_seeds if n_seeds is None else n_seeds
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_seeds)]
    chains = _run_chains(X_missing, imp, rngs, stochastic=True)
    pooled = np.mean(chains, axis=0)
    if clip is not None:
        pooled = np.clip(pooled, *clip)
    out = np.where(mask, pooled, X_missing)
    return (out, chains) if return_chains else out
