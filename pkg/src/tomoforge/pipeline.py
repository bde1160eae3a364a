"""End-to-end estimation: impute, detect noise, denoise, route, regress, pool, rebuild rho.

The routing rule is fixed by the classifier label conventions: ``isnoise``
scores of at least the noise threshold send a row through the denoiser, and
``ispure`` scores below the purity threshold select the pure-state stack
(label 0 means pure).
"""
from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import qcore
from .errors import AllMissingRow, SchemaError, UndefinedMetric
from .gbdt import MultiBooster
from .impute import ImputerModel, mice_impute
from .nn import roles
from .nn.network import Network
from .stack import MetaModel, pool

BUNDLE_VERSION = 1
KINDS = ("pure", "mixed")


@dataclass
class BranchStack:
    conv1d: Network
    conv2d: Network
    gbdt: MultiBooster
    meta: MetaModel

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Pooled tau and the three per-model predictions, shape (n, 3, 16)."""
        p1 = roles.regress_tau(self.conv1d, X)
        p2 = roles.regress_tau(self.conv2d, X)
        p3 = self.gbdt.predict(X)
        return pool(p1, p2, p3, self.meta), np.stack([p1, p2, p3], axis=1)


@dataclass
class PipelineBundle:
    imputer: ImputerModel
    isnoise: Network
    denoiser: Network
    ispure: Network
    stacks: dict  # kind -> BranchStack
    config: dict = field(default_factory=dict)

    @property
    def noise_threshold(self) -> float:
        return float(self.config.get("noise_threshold", 0.5))

    @property
    def pure_threshold(self) -> float:
        return float(self.config.get("pure_threshold", 0.5))

    # file name for every component inside a bundle directory
    FILES = {"imputer": "imputer.json", "isnoise": "isnoise.tfnn", "denoiser": "denoise.tfnn",
             "ispure": "ispure.tfnn"}

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.imputer.save(d / self.FILES["imputer"])
        self.isnoise.save(d / self.FILES["isnoise"])
        self.denoiser.save(d / self.FILES["denoiser"])
        self.ispure.save(d / self.FILES["ispure"])
        files = dict(self.FILES)
        for kind, st in self.stacks.items():
            names = {f"{kind}.conv1d": f"reg1d_{kind}.tfnn", f"{kind}.conv2d": f"reg2d_{kind}.tfnn",
                     f"{kind}.gbdt": f"gbdt_{kind}.json", f"{kind}.meta": f"meta_{kind}.json"}
            st.conv1d.save(d / names[f"{kind}.conv1d"])
            st.conv2d.save(d / names[f"{kind}.conv2d"])
            st.gbdt.save(d / names[f"{kind}.gbdt"])
            st.meta.save(d / names[f"{kind}.meta"])
            files.update(names)
        return write_manifest(d, files, self.config)

    @classmethod
    def load(cls, directory, verify: bool = True) -> "PipelineBundle":
        d = Path(directory)
        man = read_manifest(d, verify)
        f = man["files"]
        stacks = {}
        for kind in KINDS:
            if f"{kind}.meta" not in f:
                continue
            stacks[kind] = BranchStack(Network.load(d / f[f"{kind}.conv1d"]["path"]),
                                       Network.load(d / f[f"{kind}.conv2d"]["path"]),
                                       MultiBooster.load(d / f[f"{kind}.gbdt"]["path"]),
                                       MetaModel.load(d / f[f"{kind}.meta"]["path"]))
        return cls(ImputerModel.load(d / f["imputer"]["path"]), Network.load(d / f["isnoise"]["path"]),
                   Network.load(d / f["denoiser"]["path"]), Network.load(d / f["ispure"]["path"]),
                   stacks, man.get("config", {}))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory, files: dict, config: dict | None = None) -> Path:
    d = Path(directory)
    entries = {k: {"path": v, "sha256": sha256_file(d / v)} for k, v in sorted(files.items())}
    path = d / "manifest.json"
    path.write_text(json.dumps({"schema": "tomoforge.bundle", "version": BUNDLE_VERSION,
                                "files": entries, "config": config or {}}, indent=1, sort_keys=True))
    return path


def read_manifest(directory, verify: bool = True) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no bundle manifest at {path}")
    man = json.loads(path.read_text())
    if man.get("schema") != "tomoforge.bundle":
        raise SchemaError(f"{path}: not a bundle manifest")
    if verify:
        for key, e in man["files"].items():
            if sha256_file(Path(directory) / e["path"]) != e["sha256"]:
                raise SchemaError(f"{key}: hash mismatch for {e['path']}")
    return man


# ---------------------------------------------------------------- running

@dataclass
class EstimationReport:
    """Outcome for one measurement row."""

    rho: np.ndarray
    tau: np.ndarray
    tau_models: dict
    isnoise_score: float
    ispure_score: float
    denoised: bool
    branch: str
    imputed: list
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"branch": self.branch, "denoised": self.denoised,
                "isnoise_score": self.isnoise_score, "ispure_score": self.ispure_score,
                "imputed": self.imputed, "tau": self.tau.tolist(),
                "tau_models": {k: v.tolist() for k, v in self.tau_models.items()},
                "rho_real": self.rho.real.tolist(), "rho_imag": self.rho.imag.tolist(),
                "timings": self.timings}


@dataclass
class BatchResult:
    rho: np.ndarray  # (n, 4, 4)
    tau: np.ndarray  # (n, 16)
    tau_models: np.ndarray  # (n, 3, 16)
    isnoise_score: np.ndarray
    ispure_score: np.ndarray
    denoised: np.ndarray  # bool
    pure_branch: np.ndarray  # bool
    missing: np.ndarray  # (n, 36) bool
    timings: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.tau.shape[0]

    def report(self, i: int) -> EstimationReport:
        names = ("conv1d", "conv2d", "gbdt")
        return EstimationReport(self.rho[i], self.tau[i],
                                {k: self.tau_models[i, j] for j, k in enumerate(names)},
                                float(self.isnoise_score[i]), float(self.ispure_score[i]),
                                bool(self.denoised[i]), "pure" if self.pure_branch[i] else "mixed",
                                np.flatnonzero(self.missing[i]).tolist(), dict(self.timings))


def _safe_rho(tau):
    """tau -> rho, with the maximally mixed state for non-finite or zero-norm rows."""
    tau = np.array(tau, dtype=float)
    bad = ~np.all(np.isfinite(tau), axis=1) | (np.sum(tau ** 2, axis=1) == 0)
    tau[bad] = 0.0
    tau[bad, :4] = 1.0
    return qcore.tau_to_rho(tau), bad


def run_batch(X, bundle: PipelineBundle, seed=0, denoise: str = "auto", route: str = "auto",
              impute_seeds: int | None = None) -> BatchResult:
    """Estimate states for every row of ``X`` (NaN marks a missing cell).

    ``denoise`` is ``"auto"`` (follow the noise classifier), ``"on"`` or
    ``"off"``; ``route`` is ``"auto"``, ``"pure"`` or ``"mixed"``.
    Imputation uses ``seed`` for its stochastic chains.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    missing = np.isnan(X)
    if np.any(missing.all(axis=1)):
        raise AllMissingRow("a row has no observed measurements")
    timings = {}
    t0 = time.perf_counter()
    Xf = mice_impute(X, bundle.imputer, seed=seed, n_seeds=impute_seeds) if missing.any() else X.copy()
    timings["impute"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    s_noise = roles.classify(bundle.isnoise, Xf)
    if denoise == "auto":
        dn = s_noise >= bundle.noise_threshold
    else:
        dn = np.full(X.shape[0], denoise == "on")
    if dn.any():
        Xf[dn] = roles.denoise(bundle.denoiser, Xf[dn])
    s_pure = roles.classify(bundle.ispure, Xf)
    if route == "auto":
        pure = s_pure < bundle.pure_threshold
    else:
        pure = np.full(X.shape[0], route == "pure")
    timings["classify_denoise"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    tau = np.zeros((X.shape[0], 16))
    models = np.zeros((X.shape[0], 3, 16))
    for kind, sel in (("pure", pure), ("mixed", ~pure)):
        if sel.any():
            tau[sel], models[sel] = bundle.stacks[kind].predict(Xf[sel])
    rho, _ = _safe_rho(tau)
    timings["regress"] = time.perf_counter() - t0
    return BatchResult(rho, tau, models, s_noise, s_pure, dn, pure, missing, timings)


def run(sample, bundle: PipelineBundle, seed=0, **kw) -> EstimationReport:
    """Single-row convenience wrapper around :func:`run_batch`."""
    sample = np.asarray(sample, dtype=float).reshape(1, -1)
    return run_batch(sample, bundle, seed=seed, **kw).report(0)


# ---------------------------------------------------------------- metrics

def _binary(labels):
    labels = np.asarray(labels).astype(int).ravel()
    if labels.size == 0:
        raise UndefinedMetric("empty label vector")
    if not np.all((labels == 0) | (labels == 1)):
        raise UndefinedMetric("labels must be 0/1")
    return labels


def f_score(labels, preds) -> float:
    """F1 of the positive class, ``2PR / (P + R)``."""
    y = _binary(labels)
    p = _binary(preds)
    if y.sum() == 0 or y.sum() == y.size:
        raise UndefinedMetric("both classes must be present")
    tp = float(np.sum((p == 1) & (y == 1)))
    if tp == 0:
        return 0.0
    prec = tp / p.sum()
    rec = tp / y.sum()
    return 2 * prec * rec / (prec + rec)


def _avg_ranks(x):
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(x.size)
    start = np.r_[0, np.flatnonzero(np.diff(xs)) + 1]
    end = np.r_[start[1:], x.size]
    for s, e in zip(start, end):
        ranks[order[s:e]] = 0.5 * (s + e + 1)
    return ranks


def auc(labels, scores) -> float:
    """Area under the ROC curve from the Mann-Whitney rank statistic (ties averaged)."""
    y = _binary(labels)
    s = np.asarray(scores, dtype=float).ravel()
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("both classes must be present")
    r = _avg_ranks(s)
    return float((r[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate(X, bundle: PipelineBundle, truth, seed=0, is_pure=None, is_noisy=None, **kw) -> dict:
    """Fidelity/MSE summary of :func:`run_batch` against known states.

    ``truth`` is either (n, 16) tau vectors or (n, 4, 4) density matrices.
    Optional true labels add routing accuracies.
    """
    res = run_batch(X, bundle, seed=seed, **kw)
    truth = np.asarray(truth)
    if truth.ndim == 2:
        tau_true = truth
        rho_true = qcore.tau_to_rho(truth)
    else:
        rho_true = truth
        tau_true = qcore.rho_to_tau(truth)
    fid = qcore.fidelity(res.rho, rho_true)
    fid = np.atleast_1d(fid)
    out = {"n": res.n, "fidelity_mean": float(fid.mean()), "fidelity_std": float(fid.std()),
           "tau_mse": float(np.mean((res.tau - tau_true) ** 2)),
           "denoised_fraction": float(res.denoised.mean()),
           "pure_fraction": float(res.pure_branch.mean())}
    if is_pure is not None:
        out["route_accuracy"] = float(np.mean(res.pure_branch == np.asarray(is_pure, bool)))
    if is_noisy is not None:
        out["noise_accuracy"] = float(np.mean(res.denoised == np.asarray(is_noisy, bool)))
    out["fidelity"] = fid
    return out


def write_reports_csv(path, results: list[tuple[int, EstimationReport | str]]) -> None:
    """One line per input row; failed rows carry their error message."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "status", "branch", "denoised", "isnoise_score", "ispure_score",
                    "n_imputed", "imputed"] + [f"tau{k:02d}" for k in range(16)])
        for i, rep in results:
            if isinstance(rep, str):
                w.writerow([i, "error: " + rep] + [""] * 22)
                continue
            w.writerow([i, "ok", rep.branch, int(rep.denoised), repr(rep.isnoise_score),
                        repr(rep.ispure_score), len(rep.imputed), " ".join(map(str, rep.imputed))]
                       + [repr(float(t)) for t in rep.tau])
