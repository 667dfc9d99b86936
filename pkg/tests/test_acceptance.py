"""Acceptance criteria, each at its stated tolerance and runtime budget.

A PASS/FAIL line per criterion is printed in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from ceofl.ceo_sim import simulate_ceo, simulate_dithered_quantizer
from ceofl.fl_planner import (
    ConvexProblemParams,
    VarianceSchedule,
    bits_per_iteration,
    convergence_bound,
    min_iterations,
)
from ceofl.fl_sim import EstimatorConfig, make_devices, make_problem, run_many
from ceofl.rate_region import (
    DistortionAllocation,
    ProblemSpec,
    RateAllocation,
    RatePoint,
    check_membership,
    classic_comparison_sum_rate,
    induced_distortion,
    subset_rate_bound,
    sum_rate,
    sum_rate_closed_form,
    sum_rate_closed_form_total,
    sum_rate_numeric,
    sweep_sum_rate,
    waterfill_noise_rates,
)
from ceofl.rng import stream
from ceofl.units import RateUnit
from oracles import brute_force_two_device


@pytest.fixture
def worked():
    spec = ProblemSpec([1.0], [[1.0], [4.0]])
    return spec, RateAllocation.from_rates(spec, [[1.5], [0.5]])


@pytest.mark.criterion(1, "numeric sum rate matches the identical-instance closed form")
def test_closed_form_equivalence():
    gen = stream(2024, 1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        K = int(gen.integers(1, 9))
        P = int(gen.integers(1, 6))
        sx, sn = gen.uniform(0.1, 10.0, 2)
        spec = ProblemSpec.identical(sx, sn, K, P)
        floor = P * sn / K
        for D in floor * np.geomspace(1.001, 100.0, 8):
            num = sum_rate_numeric(spec, D).sum_rate
            ref = sum_rate_closed_form_total(sx, sn, K, P, D)
            worst = max(worst, abs(num - ref) / ref)
    elapsed = time.perf_counter() - start
    assert worst <= 1e-6
    assert elapsed < 5.0


@pytest.mark.criterion(2, "water-filling matches a brute-force manifold search for K = 2")
def test_waterfilling_oracle():
    start = time.perf_counter()
    noise = np.geomspace(0.1, 10.0, 10)
    worst = 0.0
    for n1 in noise:
        for n2 in noise:
            floor = 1.0 / (1.0 / n1 + 1.0 / n2)
            for D in floor * np.geomspace(1.01, 50.0, 10):
                spec = ProblemSpec([1.0], [[n1], [n2]])
                r = waterfill_noise_rates(spec, 0, D, RateUnit.NATS).sum()
                oracle = brute_force_two_device(n1, n2, D)
                assert r <= oracle + 1e-12
                worst = max(worst, oracle - r)
    elapsed = time.perf_counter() - start
    assert worst <= 1e-3
    assert elapsed < 30.0


@pytest.mark.criterion(3, "worked instance water-fills to (1.5, 0.5) bits")
def test_worked_waterfilling(worked):
    spec, _ = worked
    r = waterfill_noise_rates(spec, 0, 1.0)
    np.testing.assert_allclose(r, [1.5, 0.5], rtol=0, atol=1e-12)
    r_nats = waterfill_noise_rates(spec, 0, 1.0, RateUnit.NATS)
    residual = np.sum(-np.expm1(-2 * r_nats) / np.array([1.0, 4.0])) - 1.0
    assert abs(residual) <= 1e-12
    assert abs(induced_distortion(spec, 0, r_nats, RateUnit.NATS) - 1.0) <= 1e-12


@pytest.mark.criterion(4, "membership polytope examples and empty-subset bound")
def test_membership(worked):
    spec, rates = worked
    R = [1.5, 0.5]
    assert subset_rate_bound(spec, 0, R, 1.0, ()) == 0.0
    assert subset_rate_bound(spec, 0, R, 1.0, (0,)) == pytest.approx(1.9150, abs=5e-5)
    assert subset_rate_bound(spec, 0, R, 1.0, (1,)) == pytest.approx(0.5466, abs=5e-5)
    assert subset_rate_bound(spec, 0, R, 1.0, (0, 1)) == pytest.approx(2.5, abs=1e-12)
    alloc = DistortionAllocation([1.0], 1.0)
    accept = check_membership(spec, RatePoint([2.0, 1.0], R_kp=[[2.0], [1.0]]), alloc, rates)
    assert accept.accepted and accept.violation is None
    reject = check_membership(spec, RatePoint([1.0, 1.0], R_kp=[[1.0], [1.0]]), alloc, rates)
    assert not reject.accepted
    assert reject.violation.subset == (0,)
    assert reject.violation.rhs == pytest.approx(1.9150, abs=5e-5)


@pytest.mark.criterion(5, "unbiased sum rate stays positive where the classic one is zero")
def test_unbiased_vs_classic_gap():
    gen = stream(2024, 5)
    for _ in range(10):
        K = int(gen.integers(1, 9))
        P = int(gen.integers(1, 6))
        sx = float(gen.uniform(0.1, 10.0))
        # feasibility at D_p = 2 sx needs sn / K < 2 sx
        sn = float(gen.uniform(0.05, 1.95)) * K * sx
        spec = ProblemSpec.identical(sx, sn, K, P)
        D_total = 2.0 * float(np.sum(spec.sigma_X_sq))
        assert sum_rate(spec, D_total).sum_rate > 0
        assert sum_rate_numeric(spec, D_total).sum_rate > 0
        assert classic_comparison_sum_rate(sx, sn, K, P, D_total / P) == 0.0


@pytest.mark.criterion(6, "CEO Monte Carlo reaches the predicted MSE without bias")
def test_ceo_monte_carlo(worked):
    spec, rates = worked
    n = 100_000
    start = time.perf_counter()
    half = 4 * 1.0 * math.sqrt(2 / n)
    inside = 0
    for seed in range(20):
        rep, = simulate_ceo(spec, rates, n, seed)
        inside += abs(rep.empirical_mse - 1.0) <= half
        assert 0.99 <= rep.bias_slope <= 1.01
    elapsed = time.perf_counter() - start
    assert inside >= 19
    assert elapsed < 20.0


@pytest.mark.criterion(7, "planner formulas")
def test_planner_formulas():
    assert min_iterations(ConvexProblemParams(1.0, 1.0, 1.0), 2.0) == 6
    gen = stream(2024, 7)
    for _ in range(100):
        A, L = gen.uniform(0.1, 10.0, 2)
        eps = float(gen.uniform(1e-3, 1.0))
        D = float(gen.uniform(0.0, 100.0))
        params = ConvexProblemParams(float(A), float(L), eps)
        assert convergence_bound(params, D, min_iterations(params, D)) <= eps
    for _ in range(100):
        K = int(gen.integers(1, 11))
        P = int(gen.integers(1, 21))
        sx, sn = (float(v) for v in gen.uniform(0.01, 10.0, 2))
        D = sn / K * float(gen.uniform(1.01, 100.0))
        assert bits_per_iteration(sx, sn, K, P, D) == sum_rate_closed_form(sx, sn, K, P, D)


@pytest.mark.criterion(8, "seed-averaged suboptimality meets the convex target end to end")
def test_convex_end_to_end():
    start = time.perf_counter()
    problem = make_problem("quadratic", P=5, condition_number=10.0, seed=0)
    devices = make_devices(4, batch_size=2, noise_variance=0.1)
    D, eps = 0.5, 0.1
    T = min_iterations(ConvexProblemParams(problem.A, problem.L, eps), D)
    traces = run_many(problem, devices, EstimatorConfig("noise", D), T, range(40), workers=4)
    mean_subopt = float(np.mean([tr.avg_subopt for tr in traces]))
    elapsed = time.perf_counter() - start
    assert mean_subopt <= eps
    assert elapsed < 60.0


@pytest.mark.criterion(9, "bits per iteration converge to the late-training limit")
def test_late_training_limit():
    sn, K, P, D = 1.0, 2, 10, 1.0
    limit = -P * (K / 2) * math.log2(1 - sn / (K * D))
    schedule = VarianceSchedule(10.0 * 0.5 ** np.arange(80), np.full(80, sn))
    bits = np.array([bits_per_iteration(sx, sn, K, P, D) for sx in schedule.sigma_X_sq])
    assert np.all(np.diff(bits) <= 0)
    assert abs(bits[-1] - limit) <= 1e-9
    assert abs(bits_per_iteration(0.0, sn, K, P, D) - limit) <= 1e-9


@pytest.mark.criterion(10, "simulations are bit-identical across parallelism levels")
def test_determinism():
    spec = ProblemSpec([1.0, 2.0], [[1.0, 0.5], [4.0, 1.0]])
    rates = RateAllocation.from_rates(spec, [[1.5, 1.0], [0.5, 2.0]])
    assert simulate_ceo(spec, rates, 100_000, 5, workers=1) == \
        simulate_ceo(spec, rates, 100_000, 5, workers=4)
    assert simulate_ceo(spec, rates, 100_000, 5) == simulate_ceo(spec, rates, 100_000, 5)
    assert simulate_dithered_quantizer(spec, rates, 70_000, 5, workers=1) == \
        simulate_dithered_quantizer(spec, rates, 70_000, 5, workers=3)

    problem = make_problem("logistic", P=3, seed=2)
    devices = make_devices(3, 1, 0.5)
    for config in (EstimatorConfig("noise", 1.5), EstimatorConfig("mean"),
                   EstimatorConfig.parse("quantized:2.0", devices, 3)):
        a = run_many(problem, devices, config, 25, range(4), workers=1)
        b = run_many(problem, devices, config, 25, range(4), workers=4)
        for x, y in zip(a, b):
            for field in ("loss", "realized_var", "bits"):
                np.testing.assert_array_equal(getattr(x, field), getattr(y, field))
            assert x.avg_subopt == y.avg_subopt

    grid = np.linspace(3.0, 9.0, 7)
    serial = [r.sum_rate for r in sweep_sum_rate(spec, grid, workers=1)]
    threaded = [r.sum_rate for r in sweep_sum_rate(spec, grid, workers=4)]
    assert serial == threaded
