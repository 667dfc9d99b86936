"""Monte Carlo check that noise-quantization rates are operationally achievable.

Each device's rate is realised as an additive test channel ``U = G_k + V``
with ``V`` Gaussian of variance ``tau``. The receiver combines the ``U`` with
inverse-variance weights summing to one, which is conditionally unbiased and
has MSE equal to the induced distortion. A subtractive-dither uniform
quantizer with the same noise variance is provided as an operational stand-in.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import errors
from .rate_region import FP_ATOL, RateAllocation, induced_distortion
from .rng import blocks, parallel_map, stream
from .units import RateUnit, from_nats, to_nats

Z95 = 1.959963984540054


def test_channel_variance(sigma_N_sq, r, unit=RateUnit.BITS):
    """Test-channel noise variance ``tau`` equivalent to rate ``r``.

    Satisfies ``1 / (sigma_N_sq + tau) == (1 - exp(-2 r)) / sigma_N_sq``.
    Vectorised over array inputs; infinite rate gives ``tau = 0``.
    """
    r = to_nats(np.asarray(r, dtype=float), unit)
    if np.any(r <= 0):
        raise errors.ZeroRate("test channel undefined at zero rate (tau is infinite)")
    with np.errstate(over="ignore"):
        tau = np.asarray(sigma_N_sq, dtype=float) / np.expm1(2.0 * r)
    return float(tau) if tau.ndim == 0 else tau


def unbiased_weights(sigma_N_sq, tau):
    """Inverse-variance weights over ``sigma_N_sq + tau``; they sum to one.

    Devices with infinite ``tau`` get weight exactly zero.
    """
    var = np.asarray(sigma_N_sq, dtype=float) + np.asarray(tau, dtype=float)
    prec = np.where(np.isinf(var), 0.0, 1.0 / var)
    if not np.any(prec > 0):
        raise errors.AllRatesZero("no device carries information")
    return prec / prec.sum()


@dataclass(frozen=True)
class TestChannelAllocation:
    tau: np.ndarray
    weights: np.ndarray

    __test__ = False  # not a pytest class

    @classmethod
    def from_rates(cls, sigma_N_sq, r, unit=RateUnit.BITS):
        r = to_nats(np.asarray(r, dtype=float), unit)
        sigma_N_sq = np.asarray(sigma_N_sq, dtype=float)
        tau = np.full(r.shape, np.inf)
        active = r > 0
        tau[active] = test_channel_variance(sigma_N_sq[active], r[active], RateUnit.NATS)
        return cls(tau, unbiased_weights(sigma_N_sq, tau))

    def predicted_mse(self, sigma_N_sq):
        var = np.asarray(sigma_N_sq) + self.tau
        active = self.weights > 0
        return float(np.sum(self.weights[active] ** 2 * var[active]))


@dataclass(frozen=True)
class SimReport:
    dimension: int
    n: int
    seed: int
    empirical_mse: float
    mse_ci_halfwidth: float
    bias_slope: float
    bias_intercept: float
    slope_se: float
    intercept_se: float
    predicted_mse: float
    entropy_bits: list = field(default=None)
    rate_gap_bits: list = field(default=None)

    def to_dict(self):
        d = {"dimension": self.dimension, "n": self.n, "seed": self.seed,
             "empirical_mse": self.empirical_mse, "ci": self.mse_ci_halfwidth,
             "bias_slope": self.bias_slope, "bias_intercept": self.bias_intercept,
             "predicted_mse": self.predicted_mse}
        if self.entropy_bits is not None:
            d["entropy_bits"] = list(self.entropy_bits)
            d["rate_gap_bits"] = list(self.rate_gap_bits)
        return d


def _summarize(p, n, seed, G, G_hat, predicted, **extra):
    err = G_hat - G
    sq = err ** 2
    mse = sq.mean()
    ci = Z95 * sq.std(ddof=1) / math.sqrt(n)
    # least-squares regression of the estimate on the true source
    g_mean = G.mean()
    gc = G - g_mean
    sxx = gc @ gc
    slope = (gc @ (G_hat - G_hat.mean())) / sxx
    intercept = G_hat.mean() - slope * g_mean
    resid = G_hat - intercept - slope * G
    s2 = resid @ resid / (n - 2)
    slope_se = math.sqrt(s2 / sxx)
    intercept_se = math.sqrt(s2 * (1.0 / n + g_mean ** 2 / sxx))
    return SimReport(p, n, seed, float(mse), float(ci), float(slope), float(intercept),
                     slope_se, intercept_se, float(predicted), **extra)


def _validate(spec, rates, n):
    if n < 1000:
        raise errors.ValidationError(f"n must be at least 1000, got {n}")
    if not isinstance(rates, RateAllocation):
        rates = RateAllocation.from_rates(spec, rates)
    r = rates.r_nats.reshape(spec.K, spec.P)
    for p in range(spec.P):
        D = induced_distortion(spec, p, r[:, p], RateUnit.NATS)
        if abs(1.0 / D - 1.0 / rates.induced_D_p[p]) > FP_ATOL:
            raise errors.InconsistentAllocation(
                f"dimension {p}: rates induce D={D}, allocation records {rates.induced_D_p[p]}")
    return r


def _draw_block(seed, p, b, size, sx, sn, noise):
    """Source, observations and receiver estimate for one keyed block.

    ``noise(gen, obs, k)`` returns device ``k``'s reconstruction of ``obs``.
    """
    G = stream(seed, p, b, 0).standard_normal(size) * math.sqrt(sx)
    recon = []
    for k, s in enumerate(sn):
        gen = stream(seed, p, b, k + 1)
        obs = G + gen.standard_normal(size) * math.sqrt(s)
        recon.append(noise(gen, obs, k))
    return G, recon


def simulate_ceo(spec, rates, n=100_000, seed=0, workers=None):
    """Gaussian test-channel simulation, one :class:`SimReport` per dimension.

    Randomness is keyed by (seed, dimension, block, device), so the reports
    are bit-identical for any ``workers``.
    """
    r = _validate(spec, rates, n)
    reports = []
    for p in range(spec.P):
        sn = spec.sigma_N_sq[:, p]
        ch = TestChannelAllocation.from_rates(sn, r[:, p], RateUnit.NATS)

        def noise(gen, obs, k):
            if ch.weights[k] == 0:
                return None
            return obs + gen.standard_normal(obs.size) * math.sqrt(ch.tau[k])

        def run(block, p=p, noise=noise):
            b, size = block
            G, recon = _draw_block(seed, p, b, size, spec.sigma_X_sq[p], sn, noise)
            est = np.zeros(size)
            for k, u in enumerate(recon):
                if u is not None:
                    est += ch.weights[k] * u
            return G, est

        parts = parallel_map(run, blocks(n), workers)
        G = np.concatenate([g for g, _ in parts])
        est = np.concatenate([e for _, e in parts])
        reports.append(_summarize(p, n, seed, G, est, ch.predicted_mse(sn)))
    return reports


def _entropy_bits(indices):
    """Plug-in entropy of integer symbols with the Miller-Madow correction."""
    _, counts = np.unique(indices, return_counts=True)
    n = counts.sum()
    prob = counts / n
    h = -np.sum(prob * np.log(prob)) + (counts.size - 1) / (2.0 * n)
    return h / math.log(2.0)


def matched_step(tau):
    """Quantizer step whose uniform dither noise has variance ``tau``."""
    return math.sqrt(12.0 * tau)


def simulate_dithered_quantizer(spec, rates, n=100_000, seed=0, step_policy=matched_step,
                                dynamic_range=1.0, workers=None):
    """Replace each Gaussian test channel by subtractive-dither quantization.

    ``step_policy(tau)`` maps a test-channel variance to a step size. The
    report adds the empirical index entropy per device and its gap to the
    device's noise-quantization rate, both in bits.
    """
    r = _validate(spec, rates, n)
    reports = []
    for p in range(spec.P):
        sn = spec.sigma_N_sq[:, p]
        ch = TestChannelAllocation.from_rates(sn, r[:, p], RateUnit.NATS)
        obs_std = np.sqrt(spec.sigma_X_sq[p] + sn)
        steps = np.zeros(spec.K)
        for k in range(spec.K):
            if ch.weights[k] == 0:
                continue
            steps[k] = step_policy(ch.tau[k])
            if steps[k] > dynamic_range * 8.0 * obs_std[k]:
                raise errors.StepOverflow(
                    f"dimension {p}, device {k}: step {steps[k]} exceeds "
                    f"{dynamic_range} x 8 observation standard deviations")
        # realised noise variance of the quantizer, used in the combiner
        eff = np.where(ch.weights > 0, steps ** 2 / 12.0, np.inf)
        weights = unbiased_weights(sn, eff)

        def noise(gen, obs, k):
            if weights[k] == 0:
                return None
            if steps[k] == 0:
                return obs, obs.astype(np.int64) * 0
            dither = gen.uniform(-0.5, 0.5, obs.size) * steps[k]
            q = np.rint((obs + dither) / steps[k])
            return q * steps[k] - dither, q.astype(np.int64)

        def run(block, p=p, noise=noise, weights=weights):
            b, size = block
            G, recon = _draw_block(seed, p, b, size, spec.sigma_X_sq[p], sn, noise)
            est = np.zeros(size)
            idx = []
            for k, out in enumerate(recon):
                if out is None:
                    idx.append(None)
                    continue
                est += weights[k] * out[0]
                idx.append(out[1])
            return G, est, idx

        parts = parallel_map(run, blocks(n), workers)
        G = np.concatenate([g for g, _, _ in parts])
        est = np.concatenate([e for _, e, _ in parts])
        entropy, gap = [], []
        for k in range(spec.K):
            if weights[k] == 0:
                entropy.append(0.0)
            else:
                entropy.append(float(_entropy_bits(np.concatenate([i[k] for _, _, i in parts]))))
            gap.append(entropy[-1] - float(from_nats(r[k, p], RateUnit.BITS)))
        predicted = float(np.sum(weights[weights > 0] ** 2 * (sn + eff)[weights > 0]))
        reports.append(_summarize(p, n, seed, G, est, predicted,
                                  entropy_bits=entropy, rate_gap_bits=gap))
    return reports


def reports_to_dicts(reports):
    return [r.to_dict() for r in reports]

