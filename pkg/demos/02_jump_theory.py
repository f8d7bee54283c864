"""When does the next jump come, and where does the norm settle?

Part one compares the earliest possible first-jump step with the exact
step found by iterating the norm recursion with the smallest admissible
effective gradient.  Part two drives the norm recursion with random
effective gradients and watches it fall into the equilibrium band.

Run from the repository root:  python demos/02_jump_theory.py
"""

import numpy as np

from sidynamics.jumps import (GradientBounds, equilibrium_band, exact_jump_thresholds, first_jump_step,
                              jump_time_bounds, norm_dynamics)

eta, lam, ell, L, delta, rho0_sq = 0.01, 0.001, 0.5, 1.0, 1e-5, 5.0

nec, suf = exact_jump_thresholds(eta, lam, GradientBounds.constant(ell, L), delta)
print(f"no jump while rho^2 >= {nec:.4f}; a jump at every step once rho^2 < {suf:.4f}")

bounds = jump_time_bounds(rho0_sq, eta, lam, ell, L, delta)

# t_min comes from a geometric lower bound on rho^2 that contracts towards
# kappa * l; iterate that bound until it drops below the necessary threshold
kappa = np.sqrt(eta / (2 * lam))
y, t = rho0_sq, 0
while y > nec:
    y = kappa * ell + (1 - 4 * eta * lam) * (y - kappa * ell)
    t += 1
print(f"t_min = {bounds.t_min:.2f}; the iterated lower bound crosses at step {t}")

# The actual recursion with g_eff = L settles at kappa * L.  Here delta equals
# eta * lam, the cosine distance at equilibrium, so the run hovers on the
# threshold without crossing it.
print(f"kappa * L = {kappa * L:.4f}; first jump with g_eff = L: "
      f"{first_jump_step(rho0_sq, eta, lam, lambda t: L, delta, max_steps=200_000)}")
if not bounds.max_applicable:
    print("t_max does not apply here:", "; ".join(bounds.notes))

rng = np.random.default_rng(0)
print("\nband absorption with g_eff^2 ~ U(1, 10), eta = 1")
for lam in (0.05, 0.025, 0.0125):
    band = equilibrium_band(1.0, lam, 1.0, 10.0)
    g = np.sqrt(rng.uniform(1.0, 10.0, 20000))
    rho_sq = norm_dynamics(2 * band.band[1], 1.0, lam, g)
    inside = band.contains(rho_sq)
    entry = int(np.argmax(inside))
    print(f"  lam={lam:<7} band [{band.band[0]:.2f}, {band.band[1]:.2f}]  entered at step {entry:3d}  "
          f"(entry * eta*lam = {entry * lam:.2f}), stays: {bool(inside[entry:].all())}")
