"""The scalar recursion behind the norm dynamics.

``x_{t+1} = (1 - alpha) x_t + beta_t / x_t`` with ``beta_t`` confined to
``[a, b]``.  The map ``gamma -> (1 - alpha) gamma + alpha / gamma`` says how
far the next iterate lands from the fixed point relative to the current
one, which is why runs approach the band ``[sqrt(a/alpha), sqrt(b/alpha)]``
geometrically and cannot leave it once inside.

Run from the repository root:  python demos/03_beta_sequences.py
"""

import numpy as np

from sidynamics.betaseq import (BetaDetParams, BetaUndetParams, check_gamma_properties, gamma_map,
                                interval_convergence, iterate_det, iterate_undet)

alpha = 0.1
for g in (0.25, 0.5, 1.0, 2.0, 4.0):
    print(f"phi({g}) = {gamma_map(g, alpha):.4f}")
print("gamma-map properties hold:", check_gamma_properties(alpha).passed)

det = iterate_det(BetaDetParams(alpha=alpha, beta=4.0, x0=50.0), 60)
print(f"\ndetermined run: fixed point {det.x_star:.4f}, x_60 = {det.x[-1]:.6f}")

params = BetaUndetParams(alpha=alpha, a=1.0, b=10.0, x0=20.0, sampler="uniform", seed=0)
res = interval_convergence(params, 2000)
lo, hi = res.band
print(f"undetermined run: band [{lo:.4f}, {hi:.4f}], entered at step {res.entry_time}, exits {res.exits}")

adversarial = iterate_undet(BetaUndetParams(alpha=alpha, a=1.0, b=10.0, x0=20.0, sampler="alternating"), 200)
tail = adversarial.x[100:]
print(f"alternating betas: late iterates span [{tail.min():.4f}, {tail.max():.4f}], "
      f"inside band: {bool(np.all((tail >= lo) & (tail <= hi)))}")
