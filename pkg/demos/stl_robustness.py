"""Parse a box-visit task, evaluate exact and smooth robustness, and its Lipschitz margin."""

import numpy as np

from cpstl.stl import eval_boolean, eval_robustness, lipschitz_constant, parse_formula, smooth_robustness

regions = {"T": ([0.5, 2.5], [3.5, 5.5]), "G": ([-1.5, 6.5], [1.5, 9.5])}
phi = parse_formula("F[2,5] in_box(x1, T) && F[7,10] in_box(x1, G)", {"x1": 2}, regions)

# walk straight up: through T around k = 3..5, into G from k = 8
k = np.arange(phi.horizon + 1)[:, None]
y = np.hstack([np.ones_like(k, dtype=float), 0.9 * k])

print("horizon           ", phi.horizon)
print("satisfied         ", eval_boolean(phi, y))
print("robustness        ", round(eval_robustness(phi, y), 4))
for beta in (1.0, 10.0, 100.0):
    s, g = smooth_robustness(phi, y, beta=beta)
    lo, _ = smooth_robustness(phi, y, beta=beta, mode="lower", grad=False)
    print(f"beta={beta:<6} smooth {s:8.4f}  certified lower bound {lo:8.4f}  |grad| {np.abs(g).sum():.3f}")
print("Lipschitz constant", lipschitz_constant(phi))
