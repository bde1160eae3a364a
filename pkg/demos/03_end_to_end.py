"""Train a small model lineage and estimate states from damaged records.

Builds every artifact (autoencoders, classifiers, denoiser, regressors,
boosted trees, imputer, stacking weights) at a reduced size, then runs the
full pipeline on rows that are noisy, incomplete or both. Pass a saved
bundle directory to skip training:

    python demos/03_end_to_end.py [BUNDLE_DIR]

Training at this size takes under a minute on one core and gives a
usable but not converged model; `tomoforge train --role all` builds the
full desk lineage.
"""
import sys
import tempfile

import numpy as np

from tomoforge import datagen, noise, qcore
from tomoforge.gbdt import BoostParams
from tomoforge.lineage import LineageConfig, Workspace
from tomoforge.pipeline import PipelineBundle, run, run_batch


def small_bundle():
    gen = datagen.GenConfig(n_pure=4000, n_mixed=4000, noisy_states_per_sigma=40,
                            rotations_per_state=40,
                            distribution_mix={"normal": 16, "laplace": 8, "brown": 8, "blue": 4,
                                              "pink": 4})
    # (optimizer, learning rate, epochs) per phase
    ae = [("adam", 3e-3, 3), ("adam", 1e-3, 5)]
    cfg = LineageConfig(gen=gen, latent=64, ae_schedule=ae, ae_retrain_schedule=ae,
                        clf_schedule=[("adam", 1e-3, 2)], denoise_schedule=ae,
                        reg_schedule=[("adam", 1e-3, 10)],
                        boost=BoostParams(rounds=60), imputer_rows=2000)
    ws = Workspace(tempfile.mkdtemp(prefix="tomoforge_demo_"), cfg, log=print)
    return ws.build_all()


bundle = PipelineBundle.load(sys.argv[1]) if len(sys.argv) > 1 else small_bundle()
rng = np.random.default_rng(11)

# one pure state, measured cleanly but with five cells lost
rho = qcore.random_pure(rng)
x = qcore.measure(rho)
x[rng.choice(36, 5, replace=False)] = np.nan
rep = run(x, bundle, seed=0)
print(f"\nincomplete pure record: imputed cells {rep.imputed}, branch {rep.branch}, "
      f"fidelity {qcore.fidelity(rep.rho, rho):.4f}")

# mixed states under rotation noise
truth = qcore.random_mixed_batch(200, rng)
for label, sigma in (("0", 0.0), ("pi/12", np.pi / 12), ("pi/6", np.pi / 6)):
    X = noise.noisy_measure(truth, spec=noise.NoiseSpec("normal", sigma), rng=rng)
    res = run_batch(X, bundle, seed=0)
    f = qcore.fidelity(res.rho, truth)
    print(f"mixed, sigma={label:6s}: mean fidelity {f.mean():.4f}, "
          f"denoised {res.denoised.mean():.0%}, routed mixed {1 - res.pure_branch.mean():.0%}")
