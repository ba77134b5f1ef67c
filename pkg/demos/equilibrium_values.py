"""
Insider value functions and the pricing rule on the lattice
===========================================================

H(y, t) and L(y, t) are the expected remaining profits of the high and low
insider.  The market maker quotes the mid p(y, t), ask p(y + 1, t) and bid
p(y - 1, t).  Monte Carlo profits of the equilibrium strategy reproduce the
value, and trading on the wrong side only loses.
"""

import numpy as np

from ppbridge.equilibrium import ExperimentConfig, build_surface, hjb_residuals, optimality_mc

cfg = ExperimentConfig(delta=1.0, beta=20.0, y_target=1, t_grid=(0.1, 0.5, 0.9))
surface = build_surface(cfg)

# %% A slice of the surface at t = 0.5
j = 1
print("   y      H       L       bid     mid     ask")
for i in range(15, 26):
    print(f"{surface.y[i]:+5.0f} {surface.H[i, j]:7.4f} {surface.L[i, j]:7.4f} "
          f"{surface.b[i, j]:7.4f} {surface.p[i, j]:7.4f} {surface.a[i, j]:7.4f}")

# %% The value functions satisfy their difference and time equations
res = hjb_residuals(surface, cfg)
print(f"\nmax equality residual {max(res['equality_H_max'], res['equality_L_max']):.2e}")
print(f"time residual ratios under halving {np.round(res['time_residual_ratios'], 2)}")

# %% Realised profits against H(0, 0)
for name in ("equilibrium", "bluffing(2)", "constant_rate(0)"):
    r = optimality_mc(name, ExperimentConfig(delta=1.0, beta=20.0, y_target=1, seed=20240611), 10_000)
    print(f"{name:<18s} mean {r['mean']:.4f} +/- {r['se']:.4f}   value {r['value']:.4f}")
