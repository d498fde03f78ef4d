#!/usr/bin/env python3
"""Zeroth-order optimization on a function we can check analytically.

Two loss evaluations per perturbation give a finite-difference slope; the
entrywise inverse of the perturbation turns it into a full gradient estimate.
Averaging several estimates (after projecting away mutual conflicts) and
feeding them into a momentum update with a look-ahead point is the whole
optimizer. No derivatives anywhere.
"""

import numpy as np

from prompt_tuner.zo import (
    OptimizerState,
    Schedule,
    gradient_surgery,
    sample_perturbation,
    spsa_gradients,
    step,
)

rng = np.random.default_rng(7)
target = np.array([1.0, -0.5])
loss = lambda x: float(np.sum((x - target) ** 2))

# --- Single estimates are noisy, their mean is the true gradient. -----------
point = np.array([3.0, 3.0])
true_grad = 2 * (point - target)
ests, _, _ = spsa_gradients(loss, point, 0.01, 2000, "segmented_uniform", rng)
print(f"true gradient        {true_grad}")
print(f"one estimate         {ests[0].round(3)}")
print(f"mean of 2000         {np.mean(ests, axis=0).round(3)}")

# --- Surgery removes the conflicting component of a pair. -------------------
g1, g2 = np.array([1.0, 1.0]), np.array([-1.0, 0.0])
print(f"\nconflicting pair {g1}, {g2} (dot {g1 @ g2:+.0f})"
      f" -> {gradient_surgery([g1, g2])[0]} after projection")

# --- Full optimizer run: 300 steps from (3, 3). ------------------------------
state = OptimizerState(params=np.array([3.0, 3.0]))
sched = Schedule.for_iterations(300)
print("\n  step   distance to optimum     loss")
for t in range(1, 301):
    state, report = step(state, sched, loss, rng)
    if t in (1, 10, 50, 150, 300):
        d = np.linalg.norm(state.params - target)
        print(f"  {t:4d}   {d:18.6f}   {loss(state.params):10.2e}")
print(f"\nfinal parameters {state.params} (optimum {target})")
print(f"loss evaluations used: {300 * 2 * state.s}")

# --- Perturbations keep their inverse bounded by construction. --------------
delta = sample_perturbation(8, "segmented_uniform", rng)
print(f"\nsample perturbation magnitudes: {np.abs(delta).round(2)} (all in [0.5, 1.5])")
