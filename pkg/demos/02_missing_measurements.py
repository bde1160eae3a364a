"""How well can chained Bayesian ridge regressions fill in missing measurements?

Fits the imputer on noiseless training rows, then knocks out k cells per
row along a Halton sequence and measures the reconstruction error. The
error stays at rounding level while enough of each projector group survives
and grows roughly like a * k**2 beyond that.

    python demos/02_missing_measurements.py
"""
import numpy as np

from tomoforge import datagen, impute, qmc

train = np.concatenate([datagen.gen_noiseless("pure", 2000, seed=1).X,
                        datagen.gen_noiseless("mixed", 2000, seed=2).X])
test = np.concatenate([datagen.gen_noiseless("pure", 300, seed=3).X,
                       datagen.gen_noiseless("mixed", 300, seed=4).X])

imp = impute.fit_imputer(train)
print(f"imputer: {imp.n_iterations} sweeps x {imp.n_seeds} chains over 36 columns")

ks = [1, 4, 8, 12, 16, 20, 26]
est = qmc.sweep(test, ks, recover=lambda Xm: impute.mice_impute(Xm, imp, seed=0),
                schedule=qmc.MaskSchedule(1, 3))
print("\n  k   mse        std       masks")
for e in est:
    print(f"{e.k:3d}   {e.mean:.2e}   {e.std:.1e}   {e.n_masks}")

a = qmc.fit_quadratic_no_intercept([e.k for e in est], [e.mean for e in est])
print(f"\nleast-squares fit mse ~ a k^2: a = {a:.2e}")
