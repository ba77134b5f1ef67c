"""
From the lattice market to the Brownian limit
=============================================

Shrinking the tick delta with beta = 1 / delta^2 turns the Skellam demand into
Brownian motion.  Prices converge to Phi((y - y0) / sqrt(1 - t)), the
normalised depth to the normal density, and the insider's demand to Brownian
motion conditioned on its terminal side.
"""

import math

import numpy as np

from ppbridge.kyle import KyleParams, deterministic_errors, order_fit, p0, simulate_kb

# %% Deterministic errors shrink at first order in delta
deltas = (0.2, 0.1, 0.05)
rows = [deterministic_errors(d, 0.5) for d in deltas]
for d, r in zip(deltas, rows):
    print(f"delta={d:<5} price error {r.price_err:.4f}  depth error {r.depth_err:.4f}")
print(f"fitted depth order {order_fit(deltas, [r.depth_err for r in rows]):.2f}")

# %% The conditioned diffusion ends on the right side
params = KyleParams(0.5)
path = simulate_kb("H", params, 1e-3, np.random.default_rng(0), n_paths=5000, record=(0.5, 0.999))
print(f"\nP(Y_0.999 >= y0) simulated {np.mean(path.values[:, 1] >= params.y0):.4f}, "
      f"exact {2 * (0.25 + math.asin(math.sqrt(0.999)) / (2 * math.pi)):.4f}")
print(f"P(Y_end >= y0) simulated {np.mean(path.values[:, -1] >= params.y0):.4f}")
print(f"price at y=0.5, t=0.5: {p0(0.5, 0.5, params):.4f}")
