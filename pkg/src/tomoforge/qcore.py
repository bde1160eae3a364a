"""Two-qubit states, the 36-projector tomography set, and the tau <-> rho maps.

Every function accepts a single object or a leading batch axis, so
``measure(rho)`` works for ``rho.shape == (4, 4)`` as well as ``(n, 4, 4)``.
Measurement vectors are always in the row-major order ``k = 6 * i + j`` of
the 6x6 projector table.
"""
from __future__ import annotations

import numpy as np

from .errors import SingularState, ZeroNorm

PURE_EPS = 1e-7

_S2 = 1.0 / np.sqrt(2.0)
KETS = {
    "u+": np.array([1.0, 0.0], dtype=complex),
    "u-": np.array([0.0, 1.0], dtype=complex),
    "v+": np.array([_S2, _S2], dtype=complex),
    "v-": np.array([_S2, -_S2], dtype=complex),
    "w+": np.array([_S2, 1j * _S2], dtype=complex),
    "w-": np.array([_S2, -1j * _S2], dtype=complex),
}

# 6x6 projector table, row-major. Each entry is (first qubit, second qubit).
LAYOUT = [
    ("u+", "u+"), ("u+", "u-"), ("u-", "u-"), ("u-", "u+"), ("u-", "w+"), ("u-", "w-"),
    ("u+", "w-"), ("u+", "w+"), ("u+", "v+"), ("u+", "v-"), ("u-", "v-"), ("u-", "v+"),
    ("v-", "v+"), ("v-", "v-"), ("v+", "v-"), ("v+", "v+"), ("v+", "w+"), ("v+", "w-"),
    ("v-", "w-"), ("v-", "w+"), ("v-", "u+"), ("v-", "u-"), ("v+", "u-"), ("v+", "u+"),
    ("w+", "u+"), ("w+", "u-"), ("w-", "u-"), ("w-", "u+"), ("w-", "w+"), ("w-", "w-"),
    ("w+", "w-"), ("w+", "w+"), ("w+", "v+"), ("w+", "v-"), ("w-", "v-"), ("w-", "v+"),
]

# Consecutive quadruples share a basis pair and form a complete measurement.
GROUPS = tuple(tuple(range(4 * g, 4 * g + 4)) for g in range(9))

# Position of tau_k in the lower-triangular factor: (row, col, is_imaginary_part)
_TAU_SLOTS = [
    (0, 0, False), (1, 1, False), (2, 2, False), (3, 3, False),
    (1, 0, False), (1, 0, True),
    (2, 1, False), (2, 1, True),
    (3, 2, False), (3, 2, True),
    (2, 0, False), (2, 0, True),
    (3, 1, False), (3, 1, True),
    (3, 0, False), (3, 0, True),
]


def _rng(seed):
    return np.random.default_rng(seed)


def projector_kets() -> np.ndarray:
    """Kets ``|a> (x) |b>`` for the 36 projectors, shape (36, 4)."""
    return np.array([np.kron(KETS[a], KETS[b]) for a, b in LAYOUT])


def build_projector_set() -> np.ndarray:
    """The 36 rank-1 projectors as a (36, 4, 4) complex array."""
    kets = projector_kets()
    return np.einsum("ki,kj->kij", kets, kets.conj())


_PROJECTORS = build_projector_set()


def is_density_matrix(rho, atol: float = 1e-10) -> bool:
    rho = np.asarray(rho)
    if rho.shape[-2:] != (4, 4) or not np.all(np.isfinite(rho)):
        return False
    herm = np.abs(rho - np.conj(np.swapaxes(rho, -1, -2))).max() <= atol
    tr = np.abs(np.trace(rho, axis1=-2, axis2=-1) - 1.0).max() <= atol
    if not (herm and tr):
        return False
    herm_part = 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))
    return bool(np.linalg.eigvalsh(herm_part).min() >= -atol)


def measure(rho, ps: np.ndarray | None = None) -> np.ndarray:
    """Born-rule probabilities ``Tr(rho P_k)`` for every projector.

    Parameters
    ----------
    rho : array_like, shape (4, 4) or (n, 4, 4)
    ps : array_like, shape (36, 4, 4), optional
        Projectors; defaults to :func:`build_projector_set`.

    Returns
    -------
    ndarray, shape (36,) or (n, 36), clamped to [0, 1].
    """
    ps = _PROJECTORS if ps is None else np.asarray(ps)
    rho = np.asarray(rho, dtype=complex)
    m = np.einsum("...ij,kji->...k", rho, ps)
    if np.abs(m.imag).max(initial=0.0) > 1e-9:
        raise RuntimeError("measurement has a non-negligible imaginary part; rho is not Hermitian")
    return np.clip(m.real, 0.0, 1.0)


def tau_matrix(t) -> np.ndarray:
    """Arrange 16 reals into the lower-triangular complex factor."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape[:-1] + (4, 4), dtype=complex)
    for k, (r, c, imag) in enumerate(_TAU_SLOTS):
        out[..., r, c] += 1j * t[..., k] if imag else t[..., k]
    return out


def tau_vector(tau_mat) -> np.ndarray:
    """Inverse of :func:`tau_matrix` (upper triangle is ignored)."""
    tau_mat = np.asarray(tau_mat)
    out = np.empty(tau_mat.shape[:-2] + (16,))
    for k, (r, c, imag) in enumerate(_TAU_SLOTS):
        out[..., k] = tau_mat[..., r, c].imag if imag else tau_mat[..., r, c].real
    return out


def tau_to_rho(t) -> np.ndarray:
    """Map tau parameters to a density matrix via ``T^dag T / Tr(T^dag T)``.

    Any finite input with nonzero norm yields a valid state.
    """
    T = tau_matrix(t)
    g = np.conj(np.swapaxes(T, -1, -2)) @ T
    tr = np.trace(g, axis1=-2, axis2=-1).real
    if np.any(tr <= 0.0):
        raise ZeroNorm("tau vector has zero norm")
    rho = g / tr[..., None, None]
    return 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))


def _minor(rho, rows, cols):
    keep_r = [k for k in range(4) if k not in rows]
    keep_c = [k for k in range(4) if k not in cols]
    return np.linalg.det(rho[..., keep_r, :][..., :, keep_c])


def rho_to_tau(rho) -> np.ndarray:
    """Recover the 16 tau parameters of a strictly positive density matrix.

    Uses first and second minors (row/column deletions, no cofactor sign);
    ``m1(i, j)`` deletes row i and column j, ``m2(p, q, r, s)`` deletes rows
    p, r and columns q, s.
    """
    rho = np.asarray(rho, dtype=complex)
    det = np.linalg.det(rho).real
    m1_00 = _minor(rho, (0,), (0,)).real
    m1_01 = _minor(rho, (0,), (1,))
    m2_0011 = _minor(rho, (0, 1), (0, 1)).real
    m2_0112 = _minor(rho, (0, 1), (1, 2))
    m2_0012 = _minor(rho, (0, 1), (0, 2))
    r33 = rho[..., 3, 3].real
    # m1_00 and det of eps-perturbed pure states sit near 1e-16 and 1e-23,
    # so positivity is the only gate; basis-aligned pure states push m2_0011
    # down to (eps/4)**2.
    if (np.min(r33) <= 0.0 or np.min(m2_0011) <= 0.0
            or np.min(m1_00) <= 0.0 or np.min(det) <= 0.0):
        raise SingularState("density matrix is not strictly positive definite")

    s33 = np.sqrt(r33)
    s2 = np.sqrt(m2_0011)
    T = np.zeros(rho.shape, dtype=complex)
    T[..., 0, 0] = np.sqrt(det / m1_00)
    T[..., 1, 0] = m1_01 / np.sqrt(m1_00 * m2_0011)
    T[..., 1, 1] = np.sqrt(m1_00 / m2_0011)
    T[..., 2, 0] = m2_0112 / (s33 * s2)
    T[..., 2, 1] = m2_0012 / (s33 * s2)
    T[..., 2, 2] = s2 / s33
    T[..., 3, 0] = rho[..., 3, 0] / s33
    T[..., 3, 1] = rho[..., 3, 1] / s33
    T[..., 3, 2] = rho[..., 3, 2] / s33
    T[..., 3, 3] = s33
    return tau_vector(T)


# eigenvalues below this fraction of the largest are rounding noise; their
# square roots (~1e-8) would otherwise leak into the fidelity of pure states
_EIG_RTOL = 8 * np.finfo(float).eps


def _clean_eigs(w):
    cut = _EIG_RTOL * np.max(np.abs(w), axis=-1, keepdims=True)
    return np.where(w > cut, w, 0.0)


def _psd_sqrt(rho):
    w, v = np.linalg.eigh(rho)
    w = np.sqrt(_clean_eigs(w))
    return (v * w[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def fidelity(pred, targ) -> np.ndarray | float:
    """Uhlmann fidelity ``|Tr sqrt(sqrt(pred) targ sqrt(pred))|^2``.

    The trace equals the nuclear norm of ``sqrt(pred) @ sqrt(targ)``, so it is
    summed from singular values. That keeps tiny eigenvalues of near-pure
    states accurate to ~eps instead of ~sqrt(eps). The square roots come from
    Hermitian eigendecompositions with eigenvalues below ``8 * eps`` relative to
    the largest treated as zero. Result is clipped to [0, 1].
    """
    pred = np.asarray(pred, dtype=complex)
    targ = np.asarray(targ, dtype=complex)
    sv = np.linalg.svd(_psd_sqrt(pred) @ _psd_sqrt(targ), compute_uv=False)
    f = np.clip(sv.sum(axis=-1) ** 2, 0.0, 1.0)
    return float(f) if f.ndim == 0 else f


def purity(rho) -> np.ndarray | float:
    rho = np.asarray(rho)
    p = np.einsum("...ij,...ji->...", rho, rho).real
    return float(p) if p.ndim == 0 else p


def haar_unitaries(n: int, dim: int, seed=None) -> np.ndarray:
    """Draw ``n`` Haar-random ``dim x dim`` unitaries, shape (n, dim, dim).

    QR of a complex Ginibre matrix, with the phases of R's diagonal moved
    into Q so the result is Haar distributed.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = _rng(seed)
    z = (rng.standard_normal((n, dim, dim)) + 1j * rng.standard_normal((n, dim, dim))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    return q * (d / np.abs(d))[..., None, :]


def haar_unitary(dim: int, seed=None) -> np.ndarray:
    return haar_unitaries(1, dim, seed)[0]


def random_pure_batch(n: int, seed=None, eps: float = PURE_EPS) -> np.ndarray:
    """Pure states from the first column of Haar unitaries, mixed with ``eps * I/4``."""
    psi = haar_unitaries(n, 4, seed)[:, :, 0]
    proj = np.einsum("ni,nj->nij", psi, psi.conj())
    return (1.0 - eps) * proj + (eps / 4.0) * np.eye(4)


def random_pure(seed=None, eps: float = PURE_EPS) -> np.ndarray:
    return random_pure_batch(1, seed, eps)[0]


def random_mixed_batch(n: int, seed=None) -> np.ndarray:
    """Ginibre states ``G G^dag / Tr(G G^dag)`` with unit-variance real and imaginary parts."""
    rng = _rng(seed)
    g = rng.standard_normal((n, 4, 4)) + 1j * rng.standard_normal((n, 4, 4))
    gg = g @ np.conj(np.swapaxes(g, -1, -2))
    gg = 0.5 * (gg + np.conj(np.swapaxes(gg, -1, -2)))
    return gg / np.trace(gg, axis1=-2, axis2=-1).real[:, None, None]


def random_mixed(seed=None) -> np.ndarray:
    return random_mixed_batch(1, seed)[0]
