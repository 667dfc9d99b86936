"""Rate region, sum-rate-distortion function and communication planning for
the quadratic vector Gaussian CEO problem under an unbiased estimator, with
Monte Carlo checks of achievability and SGD convergence."""

from .rate_region import (
    DistortionAllocation,
    ProblemSpec,
    RateAllocation,
    RatePoint,
    SumRateResult,
    check_membership,
    classic_comparison_sum_rate,
    distortion_floor,
    distortion_for_sum_rate,
    induced_distortion,
    load_spec,
    subset_rate_bound,
    sum_rate,
    sum_rate_closed_form,
    sum_rate_numeric,
    waterfill_noise_rates,
)
from .units import RateUnit

__version__ = "0.1.0"
