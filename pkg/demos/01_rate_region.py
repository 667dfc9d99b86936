"""
Rate region of a two-device unbiased CEO instance
=================================================

One scalar source, two devices with noise variances 1 and 4, and a
target distortion of 1. We water-fill the noise-quantization rates,
look at the subset bounds that carve out the region, and test a few
candidate rate pairs for membership.
"""

import itertools

import numpy as np

from ceofl import (DistortionAllocation, ProblemSpec, RateAllocation, RatePoint,
                   check_membership, distortion_floor, subset_rate_bound,
                   waterfill_noise_rates)

spec = ProblemSpec(sigma_X_sq=[1.0], sigma_N_sq=[[1.0], [4.0]])

# no amount of rate beats the inverse-variance combination of the raw observations
print(f"distortion floor: {distortion_floor(spec, 0):.4f}")

# the cleaner device gets more rate; both sit on the same water level
r = waterfill_noise_rates(spec, 0, 1.0)
print("noise rates (bits):", np.round(r, 6))

# every nonempty subset of devices must jointly carry at least this much
for A in itertools.chain.from_iterable(itertools.combinations(range(2), m) for m in (1, 2)):
    print(f"  subset {A}: {subset_rate_bound(spec, 0, r, 1.0, A):.4f} bits")

alloc = DistortionAllocation([1.0], 1.0)
rates = RateAllocation.from_rates(spec, r[:, None])
for R in ([2.0, 1.0], [1.0, 1.0], [3.0, 0.0]):
    verdict = check_membership(spec, RatePoint(R), alloc, rates)
    why = "" if verdict.accepted else f" ({verdict.violation.kind} at {verdict.violation.subset})"
    print(f"R = {R}: {'ACCEPT' if verdict.accepted else 'REJECT'}{why}")
