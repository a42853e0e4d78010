#!/usr/bin/env python3
"""Tour of the embedded Euler/midpoint step and its error estimate.

The integrator takes one step twice, reusing the first field evaluation: a
first-order Euler estimate and a second-order midpoint estimate come out of
exactly two field evaluations.  Their elementwise gap is the local truncation
error estimate, and for a linear field it has a closed form we can check to
machine precision.
"""

import math

import numpy as np

from odegate.autodiff import Tensor
from odegate.dynamics import VectorFieldParams, embedded_dual_step, evolve

# --- 1. convergence order against the exact exponential --------------------
# scalar system dh/dt = c*h, exact one-step solution h0 * exp(c*dt)

c = 0.8
a_op = Tensor([[1.0]])
vf = VectorFieldParams(w_f=Tensor([[c]]), b_f=Tensor([0.0]))

print("one-step error against exp(c*dt), c = 0.8")
print(f"{'dt':>8} {'euler_err':>12} {'midpoint_err':>13} {'ratio_e':>8} {'ratio_m':>8}")
prev = None
for dt in (0.2, 0.1, 0.05, 0.025, 0.0125):
    h_euler, h_rk2 = embedded_dual_step(Tensor([[[1.0]]]), dt, a_op, vf)
    exact = math.exp(c * dt)
    err_e = abs(float(h_euler.data[0, 0, 0]) - exact)
    err_m = abs(float(h_rk2.data[0, 0, 0]) - exact)
    if prev is None:
        print(f"{dt:>8} {err_e:>12.3e} {err_m:>13.3e} {'':>8} {'':>8}")
    else:
        print(f"{dt:>8} {err_e:>12.3e} {err_m:>13.3e} "
              f"{prev[0] / err_e:>8.2f} {prev[1] / err_m:>8.2f}")
    prev = (err_e, err_m)
print("ratios settle near 4 and 8: the pair really is order 1 and order 2\n")

# --- 2. the error estimate has a closed form for linear fields -------------
# with field f(h) = A h the two estimates differ by dt^2/2 * A^2 h exactly

rng = np.random.default_rng(0)
worst = 0.0
for _ in range(100):
    a = rng.standard_normal((4, 4))
    h0 = rng.standard_normal((1, 4, 3))
    res = evolve(Tensor(h0), 1, 1.0, Tensor(a),
                 VectorFieldParams(w_f=Tensor(np.eye(3)), b_f=Tensor(np.zeros(3))),
                 comp=None, mask_mode="off")
    closed_form = 0.5 * np.abs(a @ (a @ h0[0]))
    worst = max(worst, float(np.abs(res.lte[0].data[0] - closed_form).max()))
print(f"estimate vs dt^2/2 |A^2 h| over 100 random 4x4 systems: "
      f"max deviation {worst:.2e}")

# --- 3. what the gate sees -------------------------------------------------
# the gate is sigmoid(error), so a flat region gates at exactly 0.5 and a
# violent one saturates toward (but never reaches) 1

res = evolve(Tensor(rng.standard_normal((1, 4, 3))), 4, 0.25,
             Tensor(rng.standard_normal((4, 4)) * 2.0),
             VectorFieldParams(w_f=Tensor(np.eye(3) * 3.0), b_f=Tensor(np.zeros(3))),
             comp=None, mask_mode="off", collect_masks=False)
print("\nper-step error summary on a stiff random system")
for tr in res.traces:
    print(f"  step {tr.step_index}: mean |error| {tr.e_mean:.4f}  "
          f"max {tr.e_max:.4f}  (2 field evaluations)")
print("each step cost exactly 2 evaluations; error grows where the flow is stiff")
