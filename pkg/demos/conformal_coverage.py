"""Split conformal coverage with 19 calibration points, and its conditional Beta law."""

import numpy as np

from cpstl.verify import coverage_experiment

rep = coverage_experiment(lambda g, s: g.uniform(size=s), lambda q: min(max(q, 0.0), 1.0),
                          theta=0.05, k1=19, n_trials=5000, seed=0)
print(f"marginal coverage {rep.marginal:.4f}  Wilson 95% {np.round(rep.wilson, 4).tolist()}")
print(f"exact             {rep.exact_marginal:.4f}")
print(f"conditional mean  {rep.conditional.mean():.4f} vs Beta{rep.beta_params} mean {rep.beta_mean:.4f}")
counts, edges = rep.histogram(10)
for c, a in zip(counts, edges):
    print(f"  [{a:.1f}, {a + 0.1:.1f})  {'#' * int(60 * c / counts.max())}")
