"""Desk-scale federated training with gradient estimators at a prescribed variance.

The global loss is a synthetic quadratic or ridge-regularised logistic
problem. Device ``k`` sees the true gradient plus Gaussian noise of
per-coordinate variance ``sigma^2 / B_k``. The server forms one of four
estimates (exact, batch-weighted sample mean, test-channel quantized, or
exact plus synthetic noise of total variance ``D``) and takes a projected
SGD step with the constant step size of the convex convergence bound.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from . import errors
from .ceo_sim import TestChannelAllocation
from .fl_planner import ConvexProblemParams, DConvention, bits_per_iteration, step_size
from .rate_region import ProblemSpec, RateAllocation
from .rng import parallel_map, stream
from .units import RateUnit, from_nats


@dataclass(frozen=True)
class SyntheticProblem:
    kind: str
    P: int
    L: float
    A: float
    F_star: float
    w_star: np.ndarray
    H: np.ndarray = None
    X: np.ndarray = None
    y: np.ndarray = None
    reg: float = 0.0

    @property
    def w0(self):
        return np.zeros(self.P)

    def loss(self, w):
        if self.kind == "quadratic":
            d = w - self.w_star
            return 0.5 * d @ self.H @ d + self.F_star
        z = self.y * (self.X @ w)
        return np.mean(np.logaddexp(0.0, -z)) + 0.5 * self.reg * w @ w

    def grad(self, w):
        if self.kind == "quadratic":
            return self.H @ (w - self.w_star)
        z = self.y * (self.X @ w)
        s = -self.y * stats.logistic.cdf(-z)
        return self.X.T @ s / self.y.size + self.reg * w

    def project(self, w):
        """Projection onto the ball of radius ``A`` around ``w0``."""
        norm = np.linalg.norm(w)
        return w if norm <= self.A else w * (self.A / norm)


def make_problem(kind="quadratic", P=5, condition_number=1.0, seed=0, L=1.0, A=1.0,
                 n_samples=200, reg=0.05):
    """Build a synthetic problem with known smoothness and optimum.

    Quadratic: ``F(w) = 0.5 (w - w*)^T H (w - w*)`` with eigenvalues of ``H``
    log-spaced in ``[L / condition_number, L]`` and ``||w*|| = A / 2``.
    Logistic: separable two-class data with ridge ``reg``; ``L`` and ``A``
    are derived from the data and the optimum is found by a long L-BFGS solve.
    """
    if P < 1 or condition_number < 1:
        raise errors.ValidationError("need P >= 1 and condition_number >= 1")
    gen = stream(seed, 0)
    if kind == "quadratic":
        eig = L * np.logspace(-math.log10(condition_number), 0.0, P) if P > 1 else np.array([L])
        Q, _ = np.linalg.qr(gen.standard_normal((P, P)))
        H = (Q * eig) @ Q.T
        H = 0.5 * (H + H.T)
        u = gen.standard_normal(P)
        w_star = u / np.linalg.norm(u) * (A / 2.0)
        return SyntheticProblem("quadratic", P, float(eig.max()), float(A), 0.0, w_star, H=H)
    if kind == "logistic":
        X = gen.standard_normal((n_samples, P))
        w_true = gen.standard_normal(P)
        y = np.where(X @ w_true >= 0, 1.0, -1.0)
        L_est = np.linalg.eigvalsh(X.T @ X).max() / (4.0 * n_samples) + reg
        draft = SyntheticProblem("logistic", P, L_est, np.inf, 0.0, np.zeros(P), X=X, y=y, reg=reg)
        res = optimize.minimize(draft.loss, np.zeros(P), jac=draft.grad, method="L-BFGS-B",
                                options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 10_000})
        w_star = res.x
        A_dom = max(2.0 * np.linalg.norm(w_star), 1.0)
        return SyntheticProblem("logistic", P, L_est, A_dom, float(res.fun), w_star,
                                X=X, y=y, reg=reg)
    raise errors.ValidationError(f"unknown problem kind {kind!r}")


@dataclass(frozen=True)
class DeviceModel:
    k: int
    batch_size: int = 1
    noise_variance: float = 1.0
    bias: np.ndarray = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise errors.ValidationError("batch size must be at least 1")
        if self.noise_variance < 0:
            raise errors.ValidationError("noise variance must be nonnegative")

    @property
    def local_variance(self):
        """Per-coordinate variance of this device's gradient noise."""
        return self.noise_variance / self.batch_size


def make_devices(K, batch_size=1, noise_variance=1.0):
    return [DeviceModel(k, batch_size, noise_variance) for k in range(K)]


def _device_noise(problem, device, t, seed, size=None):
    gen = stream(seed, t, device.k + 1)
    shape = (problem.P,) if size is None else (size, problem.P)
    N = gen.standard_normal(shape) * math.sqrt(device.local_variance)
    if device.bias is not None:
        N = N + device.bias
    return N


def local_gradient(problem, device, w, t, seed):
    """True gradient plus the device's Gaussian noise at iteration ``t``."""
    return problem.grad(w) + _device_noise(problem, device, t, seed)


def sample_mean_estimator(local_gradients, batch_sizes):
    """Batch-size weighted mean of the local gradients."""
    G = np.asarray(local_gradients, dtype=float)
    B = np.asarray(batch_sizes, dtype=float)
    return (B / B.sum()) @ G


def quantized_estimator(local_gradients, spec, rates, gen):
    """Test-channel perturbation of each local gradient, unbiased recombination.

    ``rates`` holds noise-quantization rates for every (device, dimension);
    ``gen`` supplies the test-channel noise.
    """
    G = np.asarray(local_gradients, dtype=float)
    if not isinstance(rates, RateAllocation):
        rates = RateAllocation.from_rates(spec, rates)
    r = rates.r_nats
    out = np.empty(spec.P)
    noise = gen.standard_normal(G.shape)
    for p in range(spec.P):
        ch = TestChannelAllocation.from_rates(spec.sigma_N_sq[:, p], r[:, p], RateUnit.NATS)
        active = ch.weights > 0
        U = G[active, p] + noise[active, p] * np.sqrt(ch.tau[active])
        out[p] = ch.weights[active] @ U
    return out


@dataclass(frozen=True)
class EstimatorConfig:
    """``kind`` is one of 'exact', 'mean', 'quantized', 'noise'.

    'noise' needs ``D`` (total variance added to the exact gradient);
    'quantized' needs ``rates`` (a K x P :class:`RateAllocation`).
    """

    kind: str
    D: float = None
    rates: RateAllocation = None

    @classmethod
    def parse(cls, text, devices=None, P=None):
        """Parse ``exact``, ``mean``, ``noise:D`` or ``quantized:D``.

        ``quantized:D`` water-fills each dimension at ``D / P`` over the
        devices' noise variances.
        """
        kind, _, arg = text.partition(":")
        if kind in ("exact", "mean"):
            return cls(kind)
        if kind == "noise":
            return cls("noise", float(arg))
        if kind == "quantized":
            from .rate_region import waterfill_noise_rates
            spec = device_spec(devices, P)
            D = float(arg)
            r = np.column_stack([waterfill_noise_rates(spec, p, D / P, RateUnit.NATS)
                                 for p in range(P)])
            return cls("quantized", D, RateAllocation.from_rates(spec, r, RateUnit.NATS))
        raise errors.ValidationError(f"unknown estimator {text!r}")

    def variance_bound(self, devices, P):
        if self.kind == "exact":
            return 0.0
        if self.kind == "noise":
            return self.D
        if self.kind == "mean":
            B = sum(d.batch_size for d in devices)
            return P * devices[0].noise_variance / B
        return float(np.sum(self.rates.induced_D_p))


def device_spec(devices, P, sigma_X_sq=1.0):
    """CEO instance seen by the server: per-coordinate device noise variances."""
    noise = np.array([[d.local_variance] * P for d in devices])
    return ProblemSpec(np.full(P, sigma_X_sq), noise)


@dataclass
class TrainingTrace:
    t: np.ndarray
    loss: np.ndarray
    subopt: np.ndarray
    realized_var: np.ndarray
    bits: np.ndarray
    sigma_X_sq_hat: np.ndarray
    avg_subopt: float
    seed: int
    step: float
    D: float
    K: int
    P: int
    sigma_N_sq: float = None
    label: str = "iid"
    meta: dict = field(default_factory=dict)

    def recompute_bits(self):
        """Per-iteration bits from the recorded variance statistics alone."""
        if self.sigma_N_sq is None:
            return np.full(self.t.size, np.nan)
        return np.array([bits_per_iteration(sx, self.sigma_N_sq, self.K, self.P, self.D,
                                            DConvention.TOTAL) for sx in self.sigma_X_sq_hat])

    def write_csv(self, fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "loss", "subopt", "realized_var", "bits"])
        for row in zip(self.t, self.loss, self.subopt, self.realized_var, self.bits):
            writer.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def _identical_noise(devices):
    v = {d.local_variance for d in devices}
    return v.pop() if len(v) == 1 else None


def run_training(problem, devices, config, T, seed=0, step=None, divergence_factor=1e6):
    """Projected SGD for ``T`` iterations with the configured gradient estimator.

    The default step is the convergence-bound step for variance bound
    ``config.variance_bound``; the averaged iterate is over ``w(1..T)``.
    Bits are charged for the 'noise' and 'quantized' estimators from the
    squared norm of the true gradient (per-coordinate second moment) and
    the devices' noise variance; error-free estimators are charged NaN.
    """
    if T < 1:
        raise errors.ValidationError("T must be at least 1")
    K, P = len(devices), problem.P
    D = config.variance_bound(devices, P)
    if step is None:
        step = step_size(ConvexProblemParams(problem.A, problem.L, 1.0), D, T)
    sn = _identical_noise(devices)
    label = "non_iid" if any(d.bias is not None for d in devices) else "iid"
    batch = [d.batch_size for d in devices]
    if config.kind == "quantized":
        spec = device_spec(devices, P)
        r_bits = from_nats(config.rates.r_nats, RateUnit.BITS)
        D_p = config.rates.induced_D_p

    w = problem.w0.copy()
    loss0 = problem.loss(w)
    limit = divergence_factor * max(abs(loss0), abs(loss0 - problem.F_star), 1e-12)
    rec = np.zeros((T, 6))
    w_sum = np.zeros(P)
    for t in range(1, T + 1):
        g = problem.grad(w)
        sx_hat = float(g @ g) / P
        bits = math.nan
        if config.kind == "exact":
            est = g
        elif config.kind == "noise":
            est = g + stream(seed, t, 0).standard_normal(P) * math.sqrt(config.D / P)
            if sn is not None:
                bits = bits_per_iteration(sx_hat, sn, K, P, config.D, DConvention.TOTAL)
        else:
            local = np.array([g + _device_noise(problem, d, t, seed) for d in devices])
            if config.kind == "mean":
                est = sample_mean_estimator(local, batch)
            elif config.kind == "quantized":
                est = quantized_estimator(local, spec, config.rates, stream(seed, t, 0))
                bits = float(r_bits.sum() + 0.5 * np.sum(np.log2(1.0 + sx_hat / D_p)))
            else:
                raise errors.ValidationError(f"unknown estimator kind {config.kind!r}")
        w = problem.project(w - step * est)
        w_sum += w
        loss = problem.loss(w)
        if not math.isfinite(loss) or abs(loss) > limit:
            raise errors.DivergenceDetected(f"loss {loss} at t={t} exceeds {limit}")
        err = est - g
        rec[t - 1] = (t, loss, loss - problem.F_star, err @ err, bits, sx_hat)

    avg_subopt = problem.loss(w_sum / T) - problem.F_star
    return TrainingTrace(rec[:, 0].astype(int), rec[:, 1], rec[:, 2], rec[:, 3], rec[:, 4],
                         rec[:, 5], float(avg_subopt), seed, float(step), float(D), K, P,
                         sn if config.kind == "noise" else None, label,
                         {"estimator": config.kind})


def run_many(problem, devices, config, T, seeds, workers=None, **kwargs):
    """One trace per seed, in seed order, threaded when ``workers > 1``."""
    return parallel_map(lambda s: run_training(problem, devices, config, T, s, **kwargs),
                        seeds, workers)


@dataclass(frozen=True)
class GradientStats:
    sigma_X_sq: np.ndarray  # (T, P) squared true-gradient coordinates
    sigma_N_sq: np.ndarray  # (T, K, P) sample variances of device noise
    autocorr: float
    crosscorr: float
    excess_kurtosis: float
    passed: dict
    degenerate: bool


def _lag1(x):
    x = x - x.mean(axis=0)
    den = np.sum(x * x, axis=0)
    num = np.sum(x[1:] * x[:-1], axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        ac = np.where(den > 0, num / den, 0.0)
    return float(np.max(np.abs(ac)))


def estimate_gradient_stats(problem, devices, w_schedule, samples=1000, seed=0,
                            max_autocorr=0.2, max_crosscorr=0.2, max_kurtosis=0.5):
    """Variance estimates and Gaussian-model diagnostics along ``w_schedule``.

    Diagnostics: largest per-dimension lag-1 autocorrelation of the true
    gradient across the schedule, largest cross-dimension correlation of the
    gradient, and largest per-(device, dimension) excess kurtosis of the
    device noise. A device set with zero noise is flagged ``degenerate`` and
    fails the kurtosis check.
    """
    if samples < 30:
        raise errors.InsufficientSamples(f"need at least 30 samples, got {samples}")
    W = np.atleast_2d(np.asarray(w_schedule, dtype=float))
    G = np.array([problem.grad(w) for w in W])
    K, P, T = len(devices), problem.P, W.shape[0]
    var = np.zeros((T, K, P))
    pooled = np.zeros((K, T * samples, P))
    for t in range(T):
        for i, d in enumerate(devices):
            N = _device_noise(problem, d, t + 1, seed, size=samples)
            var[t, i] = N.var(axis=0, ddof=1)
            pooled[i, t * samples:(t + 1) * samples] = N - N.mean(axis=0)

    autocorr = _lag1(G) if T >= 3 else math.nan
    if P >= 2 and T >= 3:
        with np.errstate(invalid="ignore", divide="ignore"):
            C = np.corrcoef(G, rowvar=False)
        C = np.nan_to_num(C[~np.eye(P, dtype=bool)])
        crosscorr = float(np.max(np.abs(C)))
    else:
        crosscorr = 0.0
    degenerate = bool(np.all(var == 0))
    kurt = math.nan if degenerate else float(np.max(np.abs(
        stats.kurtosis(pooled, axis=1, fisher=True, bias=False))))
    passed = {"autocorr": bool(abs(autocorr) <= max_autocorr) if T >= 3 else False,
              "crosscorr": bool(crosscorr <= max_crosscorr),
              "kurtosis": bool(not degenerate and kurt <= max_kurtosis)}
    return GradientStats(G ** 2, var, autocorr, crosscorr, kurt, passed, degenerate)
