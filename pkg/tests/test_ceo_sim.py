import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ceofl import errors
from ceofl.ceo_sim import (
    TestChannelAllocation,
    matched_step,
    simulate_ceo,
    simulate_dithered_quantizer,
    test_channel_variance as channel_variance,
    unbiased_weights,
)
from ceofl.rate_region import ProblemSpec, RateAllocation, waterfill_noise_rates
from ceofl.units import RateUnit

N = 100_000


@pytest.fixture(scope="module")
def worked():
    spec = ProblemSpec([1.0], [[1.0], [4.0]])
    return spec, RateAllocation.from_rates(spec, [[1.5], [0.5]])


class TestChannelVariance:
    def test_half_bit(self):
        assert channel_variance(1.0, 0.5) == pytest.approx(1.0, rel=1e-15)

    def test_infinite_rate(self):
        assert channel_variance(2.0, 200.0, RateUnit.NATS) < 1e-170

    def test_zero_rate(self):
        with pytest.raises(errors.ZeroRate):
            channel_variance(1.0, 0.0)

    @given(st.floats(1e-3, 1e3), st.floats(1e-3, 20.0))
    def test_identity(self, sn, r):
        tau = channel_variance(sn, r, RateUnit.NATS)
        assert 1.0 / (sn + tau) == pytest.approx(-math.expm1(-2 * r) / sn, rel=1e-12)


class TestWeights:
    def test_symmetric(self):
        np.testing.assert_array_equal(unbiased_weights([1.0, 1.0], [0.5, 0.5]), [0.5, 0.5])

    def test_worked_instance(self):
        ch = TestChannelAllocation.from_rates([1.0, 4.0], [1.5, 0.5])
        np.testing.assert_allclose(ch.tau, [1 / 7, 4.0], rtol=1e-14)
        np.testing.assert_allclose(ch.weights, [7 / 8, 1 / 8], rtol=1e-14)
        assert ch.predicted_mse([1.0, 4.0]) == pytest.approx(1.0, rel=1e-14)

    @given(st.lists(st.tuples(st.floats(1e-2, 1e2), st.just(0.0) | st.floats(1e-6, 10.0)),
                    min_size=1, max_size=10))
    def test_sum_to_one(self, devices):
        sn = [d[0] for d in devices]
        r = [d[1] for d in devices]
        if not any(v > 0 for v in r):
            r[0] = 1.0
        w = TestChannelAllocation.from_rates(sn, r, RateUnit.NATS).weights
        assert abs(w.sum() - 1.0) <= 1e-12
        assert np.all(w[np.asarray(r) == 0] == 0.0)

    def test_zero_rate_device_drops_out(self):
        full = TestChannelAllocation.from_rates([1.0, 4.0, 2.0], [1.5, 0.0, 0.5])
        reduced = TestChannelAllocation.from_rates([1.0, 2.0], [1.5, 0.5])
        assert full.weights[1] == 0.0
        np.testing.assert_allclose(full.weights[[0, 2]], reduced.weights, rtol=1e-15)


class TestSimulateCeo:
    def test_worked_instance(self, worked):
        spec, rates = worked
        rep, = simulate_ceo(spec, rates, N, seed=7)
        assert rep.predicted_mse == pytest.approx(1.0, rel=1e-14)
        assert abs(rep.empirical_mse - 1.0) <= 3 * rep.mse_ci_halfwidth
        assert 0.99 <= rep.bias_slope <= 1.01
        assert abs(rep.bias_intercept) <= 3 * rep.intercept_se

    def test_consistency_rate(self, worked):
        spec, rates = worked
        for seed in range(5):
            rep, = simulate_ceo(spec, rates, N, seed)
            assert abs(rep.empirical_mse - 1.0) <= 4 * 1.0 * math.sqrt(2 / N)

    def test_unbiased_across_seeds(self, worked):
        spec, rates = worked
        rejections = 0
        for seed in range(20):
            rep, = simulate_ceo(spec, rates, N, seed)
            z_slope = (rep.bias_slope - 1.0) / rep.slope_se
            z_icpt = rep.bias_intercept / rep.intercept_se
            rejections += abs(z_slope) > 1.96
            rejections += abs(z_icpt) > 1.96
        # 40 tests at the 5% level; 6 or more rejections has probability < 5%
        assert rejections <= 5

    def test_noiseless_single_device(self):
        spec = ProblemSpec([1.0], [[1e-4]])
        rates = RateAllocation.from_rates(spec, [[30.0]])
        rep, = simulate_ceo(spec, rates, 10_000, seed=1)
        assert rep.empirical_mse == pytest.approx(1e-4, rel=0.05)

    def test_deterministic_under_threads(self):
        spec = ProblemSpec([1.0, 2.0], [[1.0, 0.5], [4.0, 1.0]])
        rates = RateAllocation.from_rates(spec, [[1.5, 1.0], [0.5, 2.0]])
        a = simulate_ceo(spec, rates, 70_000, seed=3, workers=1)
        b = simulate_ceo(spec, rates, 70_000, seed=3, workers=4)
        assert a == b
        assert a != simulate_ceo(spec, rates, 70_000, seed=4)

    def test_zero_rate_device(self):
        spec = ProblemSpec([1.0], [[1.0], [100.0]])
        r = waterfill_noise_rates(spec, 0, 2.0)
        rep, = simulate_ceo(spec, RateAllocation.from_rates(spec, r[:, None]), N, seed=2)
        assert rep.predicted_mse == pytest.approx(2.0, rel=1e-12)
        assert abs(rep.empirical_mse - 2.0) <= 4 * 2.0 * math.sqrt(2 / N)

    def test_rejects_small_n_and_bad_rates(self, worked):
        spec, rates = worked
        with pytest.raises(errors.ValidationError):
            simulate_ceo(spec, rates, 999)
        bad = RateAllocation([[1.5], [0.5]], [0.9])
        with pytest.raises(errors.InconsistentAllocation):
            simulate_ceo(spec, bad, 1000)


class TestDither:
    def test_matches_gaussian_channel(self, worked):
        spec, rates = worked
        dq, = simulate_dithered_quantizer(spec, rates, N, seed=11)
        g, = simulate_ceo(spec, rates, N, seed=11)
        assert abs(dq.empirical_mse - g.empirical_mse) <= 0.05 * g.empirical_mse
        assert dq.predicted_mse == pytest.approx(1.0, rel=1e-12)
        assert 0.99 <= dq.bias_slope <= 1.01

    def test_step_matches_variance(self):
        assert matched_step(1.0) ** 2 / 12 == pytest.approx(1.0)

    def test_high_rate_reaches_floor(self):
        spec = ProblemSpec([1.0], [[1.0], [4.0]])
        r = waterfill_noise_rates(spec, 0, 0.8 * (1 + 1e-6))
        rep, = simulate_dithered_quantizer(spec, RateAllocation.from_rates(spec, r[:, None]),
                                           N, seed=1)
        assert abs(rep.empirical_mse - 0.8) <= 4 * 0.8 * math.sqrt(2 / N)

    def test_step_overflow(self):
        spec = ProblemSpec([1.0], [[1.0], [1.0], [1.0]])
        r = waterfill_noise_rates(spec, 0, 5.0)
        with pytest.raises(errors.StepOverflow):
            simulate_dithered_quantizer(spec, RateAllocation.from_rates(spec, r[:, None]), 2000)

    def test_operational_gap_recorded(self, worked):
        # the corridor is an observation about this quantizer, kept as a regression record
        spec, rates = worked
        rep, = simulate_dithered_quantizer(spec, rates, N, seed=5)
        assert len(rep.entropy_bits) == 2
        np.testing.assert_allclose(rep.rate_gap_bits, [0.75, 0.58], atol=0.03)

    def test_deterministic(self, worked):
        spec, rates = worked
        a = simulate_dithered_quantizer(spec, rates, 50_000, seed=1, workers=1)
        b = simulate_dithered_quantizer(spec, rates, 50_000, seed=1, workers=3)
        assert a == b
