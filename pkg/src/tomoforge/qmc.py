"""Quasi-Monte-Carlo missingness: Halton-driven masks and per-k estimates."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError

N_COLS = 36


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std: float
    n_masks: int
    k: int


@dataclass(frozen=True)
class MaskSchedule:
    """Number of masks for k missing entries: ``min(step * k, cap)``.

    ``PAPER_SCHEDULE`` is 50 per missing entry up to 500; ``DESK_SCHEDULE``
    scales it by 1/50, keeping the cap at k = 10.
    """

    step: int = 1
    cap: int = 10

    def n_masks(self, k: int) -> int:
        if k <= 0:
            return 1
        return min(self.step * k, self.cap)


PAPER_SCHEDULE = MaskSchedule(50, 500)
DESK_SCHEDULE = MaskSchedule(1, 10)


def _is_prime(b: int) -> bool:
    return b >= 2 and all(b % d for d in range(2, int(b ** 0.5) + 1))


def halton(index: int, base: int) -> float:
    """Radical inverse of ``index`` in ``base``: 1 -> 1/b, 2 -> 2/b, ...

    Built as an integer fraction and divided once, so the result is the
    correctly rounded value.
    """
    if index < 1:
        raise ValueError("index must be >= 1")
    if not _is_prime(base):
        raise ValueError(f"base must be prime, got {base}")
    num, den = 0, 1
    i = index
    while i > 0:
        num = num * base + i % base
        den *= base
        i //= base
    return num / den


def halton_sequence(start: int, n: int, base: int) -> np.ndarray:
    """``halton(start + i, base)`` for ``i < n``, vectorized (exact below 2**53)."""
    idx = np.arange(start, start + n, dtype=np.int64)
    num = np.zeros(n, dtype=np.int64)
    den = np.ones(n, dtype=np.int64)
    live = idx > 0
    while np.any(live):
        num[live] = num[live] * base + idx[live] % base
        den[live] *= base
        idx //= base
        live = idx > 0
    return num / den


def halton_cells(start: int, n: int) -> np.ndarray:
    """Map 2-D Halton points (bases 2, 3) to cells of the 6x6 measurement table."""
    i = np.minimum((halton_sequence(start, n, 2) * 6).astype(int), 5)
    j = np.minimum((halton_sequence(start, n, 3) * 6).astype(int), 5)
    return 6 * i + j


def gen_masks(n_masks: int, k: int, n_rows: int, seed_offset: int = 0) -> np.ndarray:
    """Boolean masks, shape (n_masks, n_rows, 36); True marks a missing cell.

    Every row gets exactly ``k`` distinct cells. Cells come from one
    continuous Halton stream starting at index ``seed_offset + 1``; a draw
    that repeats a cell already chosen for the row is skipped.
    """
    if not 0 <= k <= N_COLS - 1:
        raise ConfigError(f"k must be in [0, 35], got {k}")
    masks = np.zeros((n_masks, n_rows, N_COLS), dtype=bool)
    if k == 0 or n_masks == 0 or n_rows == 0:
        return masks
    flat = masks.reshape(-1, N_COLS)
    cursor = seed_offset + 1
    chunk = max(64, 4 * k)
    buf = halton_cells(cursor, chunk)
    pos = 0
    for row in flat:
        chosen = 0
        while chosen < k:
            if pos == buf.size:
                cursor += buf.size
                buf = halton_cells(cursor, chunk)
                pos = 0
            c = buf[pos]
            pos += 1
            if not row[c]:
                row[c] = True
                chosen += 1
    return masks


def apply_mask(X, mask) -> np.ndarray:
    out = np.array(X, dtype=float, copy=True)
    out[mask] = np.nan
    return out


def mse(original, recovered) -> float:
    return float(np.mean((np.asarray(original) - np.asarray(recovered)) ** 2))


def mc_estimate(X, k: int, metric: Callable = mse, recover: Callable | None = None,
                n_masks: int | None = None, schedule: MaskSchedule = DESK_SCHEDULE,
                seed_offset: int | None = None) -> McEstimate:
    """Mean and spread of ``metric(X, recover(masked X))`` over Halton masks.

    ``recover`` maps a matrix with NaNs to a filled one (e.g. MICE); when
    omitted the masked matrix itself is passed to the metric. Each k uses
    its own Halton stream unless ``seed_offset`` is given.
    """
    X = np.asarray(X, dtype=float)
    n_masks = schedule.n_masks(k) if n_masks is None else n_masks
    if n_masks < 1:
        raise ConfigError("n_masks must be >= 1")
    if k == 0:
        val = float(metric(X, X if recover is None else recover(X.copy())))
        return McEstimate(val, 0.0, n_masks, 0)
    offset = stream_offset(k, X.shape[0]) if seed_offset is None else seed_offset
    masks = gen_masks(n_masks, k, X.shape[0], offset)
    vals = []
    for m in masks:
        Xm = apply_mask(X, m)
        Xr = Xm if recover is None else recover(Xm)
        vals.append(float(metric(X, Xr)))
    vals = np.asarray(vals)
    return McEstimate(float(vals.mean()), float(vals.std()), n_masks, k)


def stream_offset(k: int, n_rows: int) -> int:
    """Start of the Halton stream for a k-sweep; each k gets a disjoint block."""
    return (k - 1) * max(10_000_000, 64 * n_rows * N_COLS)


def sweep(X, ks, metric: Callable = mse, recover: Callable | None = None,
          schedule: MaskSchedule = DESK_SCHEDULE, n_masks: int | None = None) -> list[McEstimate]:
    return [mc_estimate(X, k, metric, recover, n_masks, schedule) for k in ks]


def fit_quadratic_no_intercept(ks, mses) -> float:
    """Least-squares ``a`` in ``mse ~ a * k**2`` (no intercept, no linear term)."""
    k2 = np.asarray(ks, dtype=float) ** 2
    y = np.asarray(mses, dtype=float)
    if k2.size < 2:
        raise ValueError("need at least two points")
    denom = float(np.sum(k2 ** 2))
    return 0.0 if denom == 0 else float(np.sum(k2 * y) / denom)


def write_sweep_csv(path, estimates: list[McEstimate]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "mean", "std", "n_masks"])
        for e in estimates:
            w.writerow([e.k, repr(e.mean), repr(e.std), e.n_masks])
