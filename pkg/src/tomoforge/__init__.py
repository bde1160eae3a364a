"""Two-qubit state estimation from noisy and incomplete projective measurements."""

__version__ = "0.1.0"
