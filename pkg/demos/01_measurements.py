"""From a density matrix to 36 measurement probabilities and back.

Walks through the projector set, the tau parametrisation, fidelity and
what rotation noise does to the measurement record.

    python demos/01_measurements.py
"""
import numpy as np

from tomoforge import noise, qcore

rng = np.random.default_rng(7)

P = qcore.build_projector_set()
print(f"{len(P)} projectors; each group of four sums to the identity:",
      np.allclose(P.reshape(9, 4, 4, 4).sum(axis=1), np.eye(4)))

rho = qcore.random_mixed(rng)
x = qcore.measure(rho)
print("\nmeasurements of a random mixed state (6x6 layout):")
print(np.round(x.reshape(6, 6), 3))

# tau is a lower-triangular Cholesky-like factor flattened to 16 reals;
# it is what the regressors predict
tau = qcore.rho_to_tau(rho)
back = qcore.tau_to_rho(tau)
print(f"\nround trip rho -> tau -> rho, max error {np.abs(back - rho).max():.1e}")
print(f"purity {qcore.purity(rho):.3f}, F(rho, rho) = {qcore.fidelity(rho, rho):.15f}")

pure = qcore.random_pure(rng, eps=0.0)
print(f"\nF(I/4, pure) = {qcore.fidelity(np.eye(4) / 4, pure):.6f}")

print("\nrotation noise on the measurement basis (normal angles):")
for label, sigma in (("0", 0.0), ("pi/24", np.pi / 24), ("pi/12", np.pi / 12), ("pi/6", np.pi / 6)):
    xs = noise.noisy_measure(np.repeat(rho[None], 400, axis=0),
                             spec=noise.NoiseSpec("normal", sigma), rng=rng)
    dev = np.sqrt(np.mean((xs - x) ** 2))
    print(f"  sigma={label:6s} rms deviation from the ideal record {dev:.4f}")
