"""Communication budgeting for federated SGD with an unbiased CEO estimator.

Couples the minibatch-SGD convergence bound for convex L-smooth losses,

    E[F(w_avg)] - F* <= A sqrt(2 D / T) + L A^2 / T,

with the identical-instance sum-rate-distortion function, which gives the
bits each iteration needs for estimator variance ``D``. Lower ``D`` costs
more bits per iteration but fewer iterations; :func:`optimize_operating_point`
scans that trade-off.
"""

import csv
import enum
import math
from dataclasses import dataclass

import numpy as np

from . import errors
from .rate_region import sum_rate, sum_rate_closed_form
from .units import RateUnit, from_nats


class DConvention(str, enum.Enum):
    """Whether ``D`` bounds the per-dimension or the total estimator variance."""

    PER_DIMENSION = "per_dimension_D"
    TOTAL = "total_D"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"per-dim": cls.PER_DIMENSION, "per_dim": cls.PER_DIMENSION,
                   "per_dimension_d": cls.PER_DIMENSION, "total": cls.TOTAL,
                   "total_d": cls.TOTAL}
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown D convention {value!r}") from None


@dataclass(frozen=True)
class ConvexProblemParams:
    A: float
    L: float
    epsilon: float

    def __post_init__(self):
        for name in ("A", "L", "epsilon"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise errors.ValidationError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class CommPlan:
    D: float
    T: int
    bits_per_iter: float
    total_bits: float
    convention: DConvention
    bound: float
    unit: RateUnit = RateUnit.BITS

    def to_dict(self):
        return {"D": self.D, "T": self.T, "bits_per_iter": self.bits_per_iter,
                "total_bits": self.total_bits, "convention": self.convention.value,
                "convergence_bound": self.bound, "unit": self.unit.value}


@dataclass(frozen=True)
class CurvePoint:
    D: float
    T: int
    bits_per_iter: float
    total_bits: float


def convergence_bound(params, D, T):
    """``A sqrt(2D/T) + L A^2 / T``."""
    if T < 1 or D < 0:
        raise errors.ValidationError("need T >= 1 and D >= 0")
    return params.A * math.sqrt(2.0 * D / T) + params.L * params.A ** 2 / T


def step_size(params, D, T):
    """Constant step ``gamma / (L + 1)`` with ``gamma = A sqrt(2 / (D T))``.

    ``D = 0`` has no finite ``gamma``; the noiseless limit ``1 / L`` is used.
    """
    if D == 0:
        return 1.0 / params.L
    return params.A * math.sqrt(2.0 / (D * T)) / (params.L + 1.0)


def min_iterations(params, D):
    """Smallest integer ``T`` whose convergence bound is at most ``epsilon``."""
    if D < 0:
        raise errors.ValidationError("D must be nonnegative")
    eps = params.epsilon
    a = D / (2.0 * eps ** 2)
    T = math.ceil(params.A ** 2 * (math.sqrt(a + params.L / eps) + math.sqrt(a)) ** 2)
    T = max(T, 1)
    # the ceiling can land one short when the root is an integer up to rounding
    while convergence_bound(params, D, T) > eps:
        T += 1
    return T


def _per_dim(D, P, convention):
    return D / P if DConvention.parse(convention) is DConvention.TOTAL else D


def bits_per_iteration(sigma_X_sq_t, sigma_N_sq_t, K, P, D,
                       convention=DConvention.PER_DIMENSION, unit=RateUnit.BITS):
    """Bits needed in one iteration by ``K`` identical devices at variance ``D``.

    ``sigma_X_sq_t = 0`` is allowed and gives the late-training limit
    ``-P (K/2) log(1 - sigma_N_sq / (K D))``.
    """
    D_p = _per_dim(D, P, convention)
    if sigma_X_sq_t == 0:
        ratio = sigma_N_sq_t / (K * D_p)
        if not ratio < 1:
            raise errors.DistortionBelowFloor(f"D_p={D_p} must exceed {sigma_N_sq_t / K}")
        return from_nats(-0.5 * P * K * math.log1p(-ratio), unit)
    return sum_rate_closed_form(sigma_X_sq_t, sigma_N_sq_t, K, P, D_p, unit)


def bits_per_iteration_general(spec, D, convention=DConvention.PER_DIMENSION,
                               unit=RateUnit.BITS):
    """Non-identical extension: numeric sum rate of ``spec`` at variance ``D``."""
    D_total = D * spec.P if DConvention.parse(convention) is DConvention.PER_DIMENSION else D
    return sum_rate(spec, D_total, unit).sum_rate


class VarianceSchedule:
    """Step-wise table of ``(sigma_X_sq(t), sigma_N_sq(t))`` for ``t = 1, 2, ...``.

    Iterations past the end of the table reuse its last row.
    """

    def __init__(self, sigma_X_sq, sigma_N_sq):
        sx = np.atleast_1d(np.asarray(sigma_X_sq, dtype=float))
        sn = np.atleast_1d(np.asarray(sigma_N_sq, dtype=float))
        if sn.size == 1 and sx.size > 1:
            sn = np.full_like(sx, sn[0])
        if sx.shape != sn.shape or sx.ndim != 1 or sx.size == 0:
            raise errors.ValidationError("schedule columns must be equal-length 1-D arrays")
        if np.any(sx < 0) or np.any(sn <= 0):
            raise errors.ValidationError("schedule needs sigma_X_sq >= 0 and sigma_N_sq > 0")
        self.sigma_X_sq = sx
        self.sigma_N_sq = sn

    @classmethod
    def constant(cls, sigma_X_sq, sigma_N_sq):
        return cls([sigma_X_sq], [sigma_N_sq])

    @classmethod
    def from_csv(cls, path):
        """Read columns ``t,sigma_x2,sigma_n2`` (rows sorted by ``t``)."""
        with open(path, newline="") as fh:
            rows = sorted(csv.DictReader(fh), key=lambda row: int(row["t"]))
        if not rows:
            raise errors.ValidationError(f"{path}: empty schedule")
        return cls([float(r["sigma_x2"]) for r in rows], [float(r["sigma_n2"]) for r in rows])

    def __len__(self):
        return self.sigma_X_sq.size

    def total_bits(self, T, K, P, D, convention, unit=RateUnit.BITS):
        """``sum_{t=1..T}`` of the per-iteration bits."""
        m = min(T, len(self))
        per = np.array([bits_per_iteration(sx, sn, K, P, D, convention, unit)
                        for sx, sn in zip(self.sigma_X_sq[:m], self.sigma_N_sq[:m])])
        total = per.sum()
        if T > m:
            total += (T - m) * per[-1]
        return float(total)

    def feasible(self, K, P, D, convention):
        return bool(_per_dim(D, P, convention) > self.sigma_N_sq.max() / K)


def _golden(f, a, b, tol=1e-6, max_iter=100):
    """Golden-section minimisation on ``[a, b]``; returns all evaluated points."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    seen = {}

    def ev(x):
        if x not in seen:
            seen[x] = f(x)
        return seen[x]

    c, d = b - invphi * (b - a), a + invphi * (b - a)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if ev(c) < ev(d):
            b, d = d, c
            c = b - invphi * (b - a)
        else:
            a, c = c, d
            d = a + invphi * (b - a)
    return seen


def optimize_operating_point(params, schedule, K, P, D_grid,
                             convention=DConvention.PER_DIMENSION, unit=RateUnit.BITS,
                             refine=True):
    """Choose the variance bound ``D`` that minimises total bits to reach ``epsilon``.

    Every grid point gets ``T = min_iterations`` and the schedule's summed
    bits over ``T`` iterations. Infeasible grid points (at or below the
    distortion floor of some schedule row) are dropped. The best grid point
    is refined by golden-section search between its neighbours.

    Returns
    -------
    plan : CommPlan
    curve : list of CurvePoint
        One entry per feasible grid point, in grid order.
    """
    convention = DConvention.parse(convention)
    if not isinstance(schedule, VarianceSchedule):
        schedule = VarianceSchedule(*schedule)

    def evaluate(D):
        T = min_iterations(params, D)
        total = schedule.total_bits(T, K, P, D, convention, unit)
        return CurvePoint(float(D), T, total / T, total)

    grid = [float(D) for D in D_grid if schedule.feasible(K, P, float(D), convention)]
    if not grid:
        raise errors.EmptyFeasibleGrid("no grid point lies above the distortion floor")
    curve = [evaluate(D) for D in grid]
    best = min(curve, key=lambda c: c.total_bits)

    if refine and len(grid) > 1:
        i = grid.index(best.D)
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        seen = _golden(lambda D: evaluate(D).total_bits, min(lo, hi), max(lo, hi))
        D_ref, total = min(seen.items(), key=lambda kv: kv[1])
        if total < best.total_bits:
            best = evaluate(D_ref)

    bound = convergence_bound(params, best.D, best.T)
    if bound > params.epsilon:
        raise AssertionError(f"plan violates the convergence target: {bound} > {params.epsilon}")
    plan = CommPlan(best.D, best.T, best.bits_per_iter, best.total_bits, convention, bound,
                    RateUnit.parse(unit))
    return plan, curve


def nonconvex_bound(L, F0_minus_Fstar, N, D, c=1.0):
    """Order bound ``c ((F0 - F*)/N + D/L)`` on ``E||grad F||^2 / L``.

    ``c`` stands in for unspecified constants; the value is an order
    estimate, not a certified bound.
    """
    if c <= 0 or L <= 0 or N <= 0:
        raise errors.ValidationError("need c > 0, L > 0, N > 0")
    return c * (F0_minus_Fstar / N + D / L)


def write_curve_csv(curve, fh):
    """CSV with header ``D,T,bits_per_iter,total_bits``."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["D", "T", "bits_per_iter", "total_bits"])
    for c in curve:
        writer.writerow([repr(c.D), c.T, repr(c.bits_per_iter), repr(c.total_bits)])

