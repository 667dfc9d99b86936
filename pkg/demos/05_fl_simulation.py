"""
Federated SGD with rate-limited gradients
=========================================

A quadratic problem with known optimum, four devices with noisy local
gradients, and four ways for the server to form its gradient estimate.
We run each for the iteration count the convergence bound asks for and
compare the averaged-iterate suboptimality with the bound.
"""

import numpy as np

from ceofl.fl_planner import ConvexProblemParams, convergence_bound, min_iterations
from ceofl.fl_sim import (EstimatorConfig, estimate_gradient_stats, make_devices,
                          make_problem, run_many)

problem = make_problem("quadratic", P=5, condition_number=10.0, seed=0)
devices = make_devices(K=4, batch_size=2, noise_variance=0.1)
eps = 0.1

for text in ("exact", "mean", "noise:0.5", "quantized:0.5"):
    config = EstimatorConfig.parse(text, devices, problem.P)
    D = config.variance_bound(devices, problem.P)
    params = ConvexProblemParams(problem.A, problem.L, eps)
    T = min_iterations(params, D)
    traces = run_many(problem, devices, config, T, seeds=range(20), workers=4)
    subopt = np.mean([tr.avg_subopt for tr in traces])
    bits = np.mean([np.nansum(tr.bits) for tr in traces])
    print(f"{text:14s} D={D:.3f} T={T:5d}  mean subopt {subopt:.5f}"
          f"  bound {convergence_bound(params, D, T):.3f}  bits {bits:10.1f}")

# are the Gaussian modelling assumptions reasonable along a random path?
# H is not diagonal, so gradient coordinates are correlated and that check fails
W = np.random.default_rng(0).uniform(-0.5, 0.5, (400, problem.P))
stats = estimate_gradient_stats(problem, devices, W, samples=200)
print("diagnostics:", stats.passed, f"largest cross-correlation {stats.crosscorr:.2f}")
