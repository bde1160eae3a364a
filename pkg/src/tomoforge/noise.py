"""Measurement-basis misalignment noise.

Each of the 36 projectors is rotated on the second qubit by its own random
unitary ``R(theta, phi, xi)``; the angles come from one of five zero-mean
distributions with standard deviation ``sigma``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .qcore import build_projector_set

DISTRIBUTIONS = ("normal", "laplace", "brown", "blue", "pink")

# exponent beta of the 1/f^beta power spectrum
SPECTRAL_EXPONENT = {"brown": 2.0, "blue": -2.0, "pink": 1.0}


@dataclass(frozen=True)
class NoiseSpec:
    distribution: str = "normal"
    sigma: float = 0.0
    seed: int | None = None
    both_qubits: bool = False

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ConfigError(f"distribution must be one of {DISTRIBUTIONS}, got {self.distribution!r}")
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ConfigError(f"sigma must be finite and >= 0, got {self.sigma}")


def rotation(theta, phi, xi) -> np.ndarray:
    """Single-qubit rotation operator; broadcasts over array-valued angles.

    Returns shape ``broadcast(theta, phi, xi).shape + (2, 2)``.
    """
    theta, phi, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (theta, phi, xi)))
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = np.exp(0.5j * phi) * c
    out[..., 0, 1] = -1j * np.exp(1j * xi) * s
    out[..., 1, 0] = -1j * np.exp(-1j * xi) * s
    out[..., 1, 1] = np.exp(-0.5j * phi) * c
    return out


def colored_noise(beta: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance, zero-mean series with power spectrum ~ 1/f**beta."""
    freqs = np.fft.rfftfreq(n)
    scale = np.zeros_like(freqs)
    scale[1:] = freqs[1:] ** (-beta / 2.0)
    spec = (rng.standard_normal(freqs.size) + 1j * rng.standard_normal(freqs.size)) * scale
    if n % 2 == 0:
        spec[-1] = spec[-1].real * np.sqrt(2.0)
    y = np.fft.irfft(spec, n=n)
    y = y - y.mean()
    sd = y.std()
    return y / sd if sd > 0 else y


def sample_angle_series(spec: NoiseSpec, n: int, rng=None) -> np.ndarray:
    """Draw ``n`` angles (radians) from the distribution named in ``spec``.

    Colored series are rescaled to exactly zero mean and standard deviation
    ``sigma``; normal and Laplace draws are plain samples with that std.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(spec.seed if rng is None else rng)
    if spec.sigma == 0.0:
        return np.zeros(n)
    if spec.distribution == "normal":
        return rng.normal(0.0, spec.sigma, n)
    if spec.distribution == "laplace":
        return rng.laplace(0.0, spec.sigma / np.sqrt(2.0), n)
    if n == 1:
        return rng.normal(0.0, spec.sigma, 1)
    return spec.sigma * colored_noise(SPECTRAL_EXPONENT[spec.distribution], n, rng)


def _kron2(a, b):
    """Batched Kronecker product of 2x2 matrices -> 4x4."""
    return np.einsum("...ij,...kl->...ikjl", a, b).reshape(a.shape[:-2] + (4, 4))


def measure_rotated(rho, angles_b, angles_a=None, ps=None) -> np.ndarray:
    """Noisy probabilities ``Tr(rho U_k P_k U_k^dag)`` with ``U_k = I (x) R_k``.

    ``rho`` is (n, 4, 4); ``angles_b`` (n, 36, 3) hold (theta, phi, xi) for
    the second qubit. ``angles_a``, if given, rotates the first qubit too.
    """
    ps = build_projector_set() if ps is None else np.asarray(ps)
    rho = np.asarray(rho, dtype=complex)
    angles_b = np.asarray(angles_b, dtype=float)
    rb = rotation(angles_b[..., 0], angles_b[..., 1], angles_b[..., 2])
    if angles_a is None:
        ra = np.broadcast_to(np.eye(2, dtype=complex), rb.shape)
    else:
        angles_a = np.asarray(angles_a, dtype=float)
        ra = rotation(angles_a[..., 0], angles_a[..., 1], angles_a[..., 2])
    u = _kron2(ra, rb)
    rotated = u @ ps @ np.conj(np.swapaxes(u, -1, -2))
    m = np.einsum("nij,nkji->nk", rho, rotated)
    return np.clip(m.real, 0.0, 1.0)


def draw_angles(spec: NoiseSpec, n_rows: int, rng) -> np.ndarray:
    """Angles for ``n_rows`` measurement vectors, shape (n_rows, 36, 3).

    For colored noise the rows consume one contiguous series, 108 samples
    per row with (theta, phi, xi) interleaved.
    """
    series = sample_angle_series(spec, n_rows * 36 * 3, rng)
    return series.reshape(n_rows, 36, 3)


def noisy_measure(rho, ps=None, spec: NoiseSpec = NoiseSpec(), rng=None) -> np.ndarray:
    """Measure ``rho`` with an independently rotated basis for each of the 36 entries.

    Parameters
    ----------
    rho : array_like, shape (4, 4) or (n, 4, 4)
    ps : array_like, shape (36, 4, 4), optional
        Projector set; defaults to the standard one.
    spec : NoiseSpec
    rng : Generator or seed, optional; falls back to ``spec.seed``.
    """
    rho = np.asarray(rho, dtype=complex)
    single = rho.ndim == 2
    rho = rho[None] if single else rho
    rng = np.random.default_rng(spec.seed if rng is None else rng)
    angles_b = draw_angles(spec, rho.shape[0], rng)
    angles_a = draw_angles(spec, rho.shape[0], rng) if spec.both_qubits else None
    m = measure_rotated(rho, angles_b, angles_a, ps)
    return m[0] if single else m
