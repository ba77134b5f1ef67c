"""
Simulating order flow that is forced to end on the insider's side
=================================================================

Noise traders send unit buy and sell orders at rate beta each, so the net
demand Y_t is a Skellam random walk.  An insider who knows whether the asset
pays off (Y_1 >= y1) adds lone buys and cancels noise sells so that the
terminal event matches the truth, while Y keeps the noise law at every time.
"""

import math

import numpy as np

from ppbridge.harness import chi_square_skellam
from ppbridge.law import BridgeLawParams, log_h
from ppbridge.simulator import EventKind, build_path, simulate_batch
from ppbridge.skellam import SkellamParams

params = BridgeLawParams(beta=20.0, y_target=1)
print(f"prior probability of the high type h(0, 0) = {params.h00:.4f}")

# %% One path, event by event
path = build_path(params, seed=3)
print(f"\nhigh type: {path.member_high}, terminal demand {path.terminal_y}")
for e in path.events[:12]:
    print(f"  t={e.time:.4f}  {EventKind(e.kind).name:<20s} Y={e.y_after:+d}")
print(f"  ... {len(path.events)} events in total")

# %% A batch: the terminal event always equals the type
batch = simulate_batch(params, 20_000, seed=1)
print(f"\nviolations of the terminal constraint: {batch.violations().size}")
print(f"insider orders per path: {batch.insider_counts().mean():.2f}")

# %% The marginal law at t is still Skellam(beta t), type mixed at the prior
for t in (0.25, 0.5, 1.0):
    r = chi_square_skellam(batch.y_at(t), SkellamParams(params.beta * t))
    print(f"t={t:4.2f}: chi-square p = {r.p_value:.3f}")

# %% The market's posterior P(high | Y_t = y) is h(y, t)
y = batch.y_at(0.5)
for k in range(-3, 4):
    sel = y == k
    print(f"Y_0.5={k:+d}: frequency {batch.member_high[sel].mean():.3f}  "
          f"h = {math.exp(log_h(k, 0.5, 20.0, 1)):.3f}  (n={int(sel.sum())})")
