"""
Planning the communication budget of federated SGD
==================================================

A larger gradient distortion D is cheaper per iteration but needs more
iterations to reach the same accuracy. The planner walks a grid of D,
computes the iterations required by the convex convergence bound and
the bits each iteration costs, and returns the cheapest total.
"""

import numpy as np

from ceofl.fl_planner import (ConvexProblemParams, VarianceSchedule, bits_per_iteration,
                              min_iterations, optimize_operating_point)

params = ConvexProblemParams(A=1.0, L=1.0, epsilon=0.1)
K, P = 2, 10

# a worked point: one noiseless iteration budget vs one at D = 2
print("T at D=0:", min_iterations(params, 0.0), " T at D=2:", min_iterations(params, 2.0))

# constant variances: total bits flatten out at large D instead of blowing up
plan, curve = optimize_operating_point(params, VarianceSchedule.constant(1.0, 1.0), K, P,
                                       np.geomspace(0.6, 500, 40))
print(f"constant schedule: best D={plan.D:.3f}, T={plan.T}, total {plan.total_bits:.1f} bits")
for c in curve[::8]:
    print(f"  D={c.D:8.3f}  T={c.T:7d}  bits/iter={c.bits_per_iter:8.3f}  total={c.total_bits:9.1f}")

# gradients shrink as training converges, so later iterations cost less; here the
# cheapest point sits at the end of the grid because the curve only plateaus
decay = VarianceSchedule(4.0 * 0.97 ** np.arange(400), np.ones(400))
plan, _ = optimize_operating_point(params, decay, K, P, np.geomspace(0.6, 500, 40))
print(f"decaying schedule: best D={plan.D:.3f}, T={plan.T}, total {plan.total_bits:.1f} bits")

# with the gradient variance gone only the noise description is left to pay for
limit = -P * K / 2 * np.log2(1 - 1.0 / (K * 1.0))
print(f"late-training bits/iter at D=1: {bits_per_iteration(0.0, 1.0, K, P, 1.0):.6f}"
      f" (limit {limit:.6f})")
