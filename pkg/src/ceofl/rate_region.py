"""Unbiased-estimator rate region of the quadratic vector Gaussian CEO problem.

A CEO instance has a hidden zero-mean Gaussian source with independent
coordinates (variances ``sigma_X_sq[p]``) observed by ``K`` devices through
independent additive Gaussian noise (variances ``sigma_N_sq[k, p]``). For a
per-dimension distortion ``D_p`` the devices' noise-quantization rates
``r[k, p]`` must satisfy

    sum_k (1 - exp(-2 r[k, p])) / sigma_N_sq[k, p] = 1 / D_p

and the per-device rates then live in a contra-polymatroid whose subset
bounds are given by :func:`subset_rate_bound`. The minimum sum rate over this
region is the sum-rate-distortion function, computed exactly for identical
instances by :func:`sum_rate_closed_form` and numerically in general by
:func:`sum_rate_numeric`.

All internal arithmetic is in nats. Public functions take a ``unit`` argument
(bits by default) for every rate they consume or return.
"""

import csv
import itertools
import json
import math
import pathlib
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import errors
from .units import RateUnit, from_nats, to_nats

#: absolute tolerance on ``1/D_p`` when checking the noise-rate equality
FP_ATOL = 1e-9
#: relative tolerance on the water-filling threshold in bisection mode
LAMBDA_RTOL = 1e-10
#: membership enumerates ``2**K - 1`` subsets per dimension
MAX_DEVICES = 20


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ProblemSpec:
    """One CEO instance.

    Parameters
    ----------
    sigma_X_sq : array_like, shape (P,)
        Per-dimension source variances.
    sigma_N_sq : array_like, shape (K, P)
        Per-device, per-dimension observation-noise variances.
    """

    sigma_X_sq: np.ndarray
    sigma_N_sq: np.ndarray

    def __post_init__(self):
        sx = np.atleast_1d(np.asarray(self.sigma_X_sq, dtype=float))
        sn = np.asarray(self.sigma_N_sq, dtype=float)
        if sx.ndim != 1 or sx.size < 1:
            raise errors.InvalidSpec("sigma_X_sq must be a non-empty 1-D array")
        if sn.ndim == 1 and sx.size == 1:
            sn = sn[:, None]
        if sn.ndim != 2 or sn.shape[1] != sx.size or sn.shape[0] < 1:
            raise errors.InvalidSpec(
                f"sigma_N_sq must have shape (K, {sx.size}), got {sn.shape}")
        for name, arr in (("sigma_X_sq", sx), ("sigma_N_sq", sn)):
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise errors.InvalidSpec(f"{name} must be strictly positive and finite")
        object.__setattr__(self, "sigma_X_sq", _readonly(sx))
        object.__setattr__(self, "sigma_N_sq", _readonly(sn))

    @property
    def P(self):
        return self.sigma_X_sq.size

    @property
    def K(self):
        return self.sigma_N_sq.shape[0]

    @property
    def is_identical(self):
        """True when all source variances agree and all noise variances agree."""
        return bool(np.all(self.sigma_X_sq == self.sigma_X_sq[0])
                    and np.all(self.sigma_N_sq == self.sigma_N_sq.flat[0]))

    @classmethod
    def identical(cls, sigma_X_sq, sigma_N_sq, K, P=1):
        return cls(np.full(P, float(sigma_X_sq)), np.full((K, P), float(sigma_N_sq)))

    @classmethod
    def from_dict(cls, d):
        try:
            spec = cls(d["sigma_X_sq"], d["sigma_N_sq"])
        except KeyError as exc:
            raise errors.InvalidSpec(f"missing key {exc.args[0]!r}") from None
        for key, actual in (("P", spec.P), ("K", spec.K)):
            if key in d and int(d[key]) != actual:
                raise errors.InvalidSpec(f"{key}={d[key]} disagrees with array shapes ({actual})")
        return spec

    def to_dict(self):
        return {"P": self.P, "K": self.K,
                "sigma_X_sq": self.sigma_X_sq.tolist(),
                "sigma_N_sq": self.sigma_N_sq.tolist()}


def load_spec(path):
    """Read a :class:`ProblemSpec` from a JSON or TOML file.

    Returns ``(spec, unit)`` where ``unit`` is the document's ``unit`` key
    (bits when absent).
    """
    path = pathlib.Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise errors.InvalidSpec(f"{path}: {exc}") from None
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise errors.InvalidSpec(f"{path}: {exc}") from None
    unit = RateUnit.parse(doc.get("unit", "bits"))
    return ProblemSpec.from_dict(doc), unit


@dataclass(frozen=True)
class DistortionAllocation:
    D_p: np.ndarray
    D_total: float

    def __post_init__(self):
        object.__setattr__(self, "D_p", _readonly(np.atleast_1d(self.D_p)))
        object.__setattr__(self, "D_total", float(self.D_total))

    def to_dict(self):
        return {"D_p": self.D_p.tolist(), "D_total": self.D_total}


@dataclass(frozen=True)
class RateAllocation:
    """Noise-quantization rates ``r`` (shape (K, P), in ``unit``) and the
    per-dimension distortions they induce."""

    r: np.ndarray
    induced_D_p: np.ndarray
    unit: RateUnit = RateUnit.BITS

    def __post_init__(self):
        object.__setattr__(self, "r", _readonly(self.r))
        object.__setattr__(self, "induced_D_p", _readonly(self.induced_D_p))
        object.__setattr__(self, "unit", RateUnit.parse(self.unit))
        if np.any(self.r < 0):
            raise errors.ValidationError("noise-quantization rates must be nonnegative")

    @classmethod
    def from_rates(cls, spec, r, unit=RateUnit.BITS):
        r = np.asarray(r, dtype=float).reshape(spec.K, spec.P)
        D = [induced_distortion(spec, p, r[:, p], unit) for p in range(spec.P)]
        return cls(r, D, unit)

    @property
    def r_nats(self):
        return to_nats(np.asarray(self.r), self.unit)

    def in_unit(self, unit):
        return RateAllocation(from_nats(self.r_nats, unit), self.induced_D_p, unit)

    def to_dict(self):
        return {"r": self.r.tolist(), "induced_D_p": self.induced_D_p.tolist(),
                "unit": self.unit.value}


@dataclass(frozen=True)
class RatePoint:
    R_k: np.ndarray
    unit: RateUnit = RateUnit.BITS
    R_kp: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "R_k", _readonly(np.atleast_1d(self.R_k)))
        object.__setattr__(self, "unit", RateUnit.parse(self.unit))
        if self.R_kp is not None:
            R_kp = np.asarray(self.R_kp, dtype=float)
            if R_kp.ndim == 1:
                R_kp = R_kp[:, None]
            object.__setattr__(self, "R_kp", _readonly(R_kp))


@dataclass(frozen=True)
class SumRateResult:
    sum_rate: float
    allocation: DistortionAllocation
    rates: RateAllocation
    per_dim_rate: np.ndarray
    method: str
    unit: RateUnit = RateUnit.BITS
    solver_stats: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "sum_rate": self.sum_rate,
            "unit": self.unit.value,
            "method": self.method,
            "per_dim_rate": np.asarray(self.per_dim_rate).tolist(),
            "allocation": self.allocation.to_dict(),
            "rates": self.rates.to_dict(),
            "solver_stats": self.solver_stats,
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


# ---------------------------------------------------------------------------
# per-dimension primitives

def distortion_floor(spec, p):
    """Smallest distortion reachable on dimension ``p`` with unbounded rates."""
    return 1.0 / np.sum(1.0 / spec.sigma_N_sq[:, p])


def distortion_floors(spec):
    return 1.0 / np.sum(1.0 / spec.sigma_N_sq, axis=0)


def _check_D(spec, p, D_p):
    if not D_p > 0:
        raise errors.DistortionNonpositive(f"D_p must be positive, got {D_p}")
    floor = distortion_floor(spec, p)
    if not D_p > floor:
        raise errors.DistortionBelowFloor(
            f"D_p={D_p} must exceed the distortion floor {floor} of dimension {p}")


def induced_distortion(spec, p, r_p, unit=RateUnit.BITS):
    """Distortion on dimension ``p`` induced by noise-quantization rates ``r_p``."""
    r = to_nats(np.asarray(r_p, dtype=float), unit)
    if np.any(r < 0):
        raise errors.ValidationError("rates must be nonnegative")
    info = np.sum(-np.expm1(-2.0 * r) / spec.sigma_N_sq[:, p])
    if info <= 0:
        raise errors.AllRatesZero(f"all rates on dimension {p} are zero")
    return 1.0 / info


def _waterfill_exact(noise, D):
    """Active-set solution of min sum(r) s.t. sum((1 - e^{-2r}) / noise) = 1/D.

    Returns ``(r_nats, lam)``. Active devices satisfy ``noise * e^{2r} = 2 lam``.
    """
    order = np.argsort(noise, kind="stable")
    ns = noise[order]
    cum = np.cumsum(1.0 / ns)
    u = 1.0 / D
    for m in range(1, ns.size + 1):
        c = (cum[m - 1] - u) / m  # c = 1 / (2 lam)
        if c <= 0:
            continue
        level = 1.0 / c
        if ns[m - 1] < level and (m == ns.size or level <= ns[m]):
            r = np.zeros_like(noise)
            r[order[:m]] = -0.5 * np.log(c * ns[:m])
            return r, 0.5 * level
    return None


def _waterfill_bisect(noise, D, rtol=LAMBDA_RTOL):
    u = 1.0 / D

    def info(lam):
        return np.sum(np.maximum(1.0 / noise - 0.5 / lam, 0.0))

    lo, hi = 0.5 * noise.min(), noise.max()
    while info(hi) < u:
        hi *= 2.0
    iterations = 0
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if info(mid) < u:
            lo = mid
        else:
            hi = mid
        iterations += 1
    lam = 0.5 * (lo + hi)
    r = np.maximum(0.5 * np.log(2.0 * lam / noise), 0.0)
    return r, lam, iterations


def waterfill_noise_rates(spec, p, D_p, unit=RateUnit.BITS, method="exact",
                          rtol=LAMBDA_RTOL, full_output=False):
    """Minimum-total noise-quantization rates meeting distortion ``D_p``.

    Devices whose noise variance is below the water level ``2 * lam`` get
    rate ``0.5 * log(2 lam / sigma_N_sq[k, p])``; the others get zero.

    Parameters
    ----------
    method : {'exact', 'bisection'}
        ``'exact'`` solves for the active set directly; ``'bisection'``
        searches the water level to relative tolerance ``rtol``.
    full_output : bool
        Also return the water level ``lam``.
    """
    _check_D(spec, p, D_p)
    noise = spec.sigma_N_sq[:, p]
    sol = _waterfill_exact(noise, D_p) if method == "exact" else None
    if sol is None:
        if method not in ("exact", "bisection"):
            raise ValueError(f"unknown method {method!r}")
        r, lam, _ = _waterfill_bisect(noise, D_p, rtol)
    else:
        r, lam = sol
    r = from_nats(r, unit)
    return (r, lam) if full_output else r


def waterfill_kkt_violation(spec, p, r_p, unit=RateUnit.BITS):
    """Largest relative KKT violation of a water-filling solution.

    Active devices must share ``sigma_N_sq * exp(2 r)``; inactive ones must
    have noise variance at least that level.
    """
    r = to_nats(np.asarray(r_p, dtype=float), unit)
    noise = spec.sigma_N_sq[:, p]
    active = r > 0
    if not active.any():
        return math.inf
    levels = noise[active] * np.exp(2.0 * r[active])
    level = levels.mean()
    spread = np.max(np.abs(levels - level)) / level
    inactive_gap = np.max(np.maximum(level - noise[~active], 0.0) / level, initial=0.0)
    return max(spread, inactive_gap)


def subset_rate_bound(spec, p, r_p, D_p, A, unit=RateUnit.BITS, atol=FP_ATOL):
    """Lower bound on ``sum_{k in A} R[k, p]`` for the rate tuple ``r_p``.

    ``A`` is an iterable of 0-based device indices. The bound is zero for the
    empty set whenever ``(r_p, D_p)`` is consistent.
    """
    r = to_nats(np.asarray(r_p, dtype=float), unit)
    gains = -np.expm1(-2.0 * r) / spec.sigma_N_sq[:, p]
    if abs(gains.sum() - 1.0 / D_p) > atol:
        raise errors.InconsistentAllocation(
            f"dimension {p}: sum of rate gains {gains.sum()} != 1/D_p = {1.0 / D_p}")
    mask = np.zeros(spec.K, dtype=bool)
    mask[list(A)] = True
    if not mask.any():
        return 0.0
    inv_sx = 1.0 / spec.sigma_X_sq[p]
    # log((inv_sx + 1/D_p) / (inv_sx + sum_{A^c} gains)); exact 0 on the empty set
    bound = r[mask].sum() + 0.5 * (math.log(inv_sx + 1.0 / D_p)
                                   - math.log(inv_sx + gains[~mask].sum()))
    return from_nats(bound, unit)


def _subsets(K):
    for size in range(1, K + 1):
        yield from itertools.combinations(range(K), size)


@dataclass(frozen=True)
class Violation:
    kind: str  # 'subset', 'budget' or 'aggregate'
    p: int = None
    subset: tuple = None
    device: int = None
    lhs: float = None
    rhs: float = None


@dataclass(frozen=True)
class MembershipVerdict:
    accepted: bool
    violation: Violation = None
    R_kp: np.ndarray = None
    unit: RateUnit = RateUnit.BITS

    def __bool__(self):
        return self.accepted


def _check_certificate(spec, allocation, rates):
    if allocation.D_p.size != spec.P:
        raise errors.InconsistentAllocation("allocation has the wrong number of dimensions")
    if allocation.D_p.sum() > allocation.D_total * (1 + 1e-12):
        raise errors.InconsistentAllocation(
            f"sum of D_p {allocation.D_p.sum()} exceeds D_total {allocation.D_total}")
    r = rates.r_nats
    for p in range(spec.P):
        gains = -np.expm1(-2.0 * r[:, p]) / spec.sigma_N_sq[:, p]
        if abs(gains.sum() - 1.0 / allocation.D_p[p]) > FP_ATOL:
            raise errors.InconsistentAllocation(
                f"dimension {p}: rates induce 1/D = {gains.sum()}, "
                f"allocation says {1.0 / allocation.D_p[p]}")
    return r


def _bound_table(spec, r, D_p):
    """Subset bounds (nats) keyed by (p, subset)."""
    return {(p, A): subset_rate_bound(spec, p, r[:, p], D_p[p], A, RateUnit.NATS)
            for p in range(spec.P) for A in _subsets(spec.K)}


def _search_decomposition(spec, R_k, bounds):
    """Find R_kp >= 0 with every subset bound met and sum_p R_kp <= R_k."""
    K, P = spec.K, spec.P
    rows, rhs = [], []
    for (p, A), b in bounds.items():
        row = np.zeros(K * P)
        row[[k * P + p for k in A]] = -1.0
        rows.append(row)
        rhs.append(-b)
    for k in range(K):
        row = np.zeros(K * P)
        row[k * P:(k + 1) * P] = 1.0
        rows.append(row)
        rhs.append(R_k[k])
    res = optimize.linprog(np.zeros(K * P), A_ub=np.array(rows), b_ub=np.array(rhs),
                           bounds=(0, None), method="highs")
    if res.status == 0:
        return res.x.reshape(K, P)
    return None


def check_membership(spec, point, allocation, rates, search=True, max_devices=MAX_DEVICES,
                     tol=1e-9):
    """Decide whether ``point`` lies in the rate region under a certificate.

    The certificate is the distortion split ``allocation`` and the
    noise-quantization rates ``rates``. When ``point.R_kp`` is given every
    subset constraint is checked against it and the first violation is
    reported (dimension-major, subsets by size then lexicographically).
    Without it, a feasible decomposition is searched for by linear
    programming unless ``search`` is false.
    """
    if spec.K > max_devices:
        raise errors.ValidationError(
            f"K={spec.K} exceeds max_devices={max_devices}; raise the cap explicitly")
    r = _check_certificate(spec, allocation, rates)
    R_k = to_nats(np.asarray(point.R_k, dtype=float), point.unit)
    if R_k.size != spec.K:
        raise errors.ValidationError("rate point has the wrong number of devices")
    if np.any(R_k < 0):
        return MembershipVerdict(False, Violation("budget", device=int(np.argmin(R_k)),
                                                  lhs=float(R_k.min()), rhs=0.0), unit=point.unit)
    bounds = _bound_table(spec, r, allocation.D_p)

    if point.R_kp is not None:
        R_kp = to_nats(np.asarray(point.R_kp, dtype=float), point.unit)
        if R_kp.shape != (spec.K, spec.P):
            raise errors.ValidationError(f"R_kp must have shape {(spec.K, spec.P)}")
        for k in range(spec.K):
            if R_kp[k].sum() > R_k[k] + tol:
                return MembershipVerdict(False, Violation(
                    "budget", device=k, lhs=from_nats(R_kp[k].sum(), point.unit),
                    rhs=from_nats(R_k[k], point.unit)), unit=point.unit)
        for (p, A), b in bounds.items():
            lhs = R_kp[list(A), p].sum()
            if lhs < b - tol:
                return MembershipVerdict(False, Violation(
                    "subset", p=p, subset=A, lhs=from_nats(lhs, point.unit),
                    rhs=from_nats(b, point.unit)), unit=point.unit)
        return MembershipVerdict(True, R_kp=from_nats(R_kp, point.unit), unit=point.unit)

    if not search:
        raise errors.CertificateMissing("no R_kp decomposition supplied and search disabled")
    # aggregate necessary condition gives a readable rejection reason
    for A in _subsets(spec.K):
        need = sum(bounds[(p, A)] for p in range(spec.P))
        have = R_k[list(A)].sum()
        if have < need - tol:
            return MembershipVerdict(False, Violation(
                "aggregate", subset=A, lhs=from_nats(have, point.unit),
                rhs=from_nats(need, point.unit)), unit=point.unit)
    R_kp = _search_decomposition(spec, R_k + tol, bounds)
    if R_kp is None:
        return MembershipVerdict(False, Violation("aggregate"), unit=point.unit)
    return MembershipVerdict(True, R_kp=from_nats(R_kp, point.unit), unit=point.unit)


# ---------------------------------------------------------------------------
# sum-rate-distortion function

def sum_rate_closed_form(sigma_X_sq, sigma_N_sq, K, P, D_p, unit=RateUnit.BITS):
    """Sum rate of an identical instance at per-dimension distortion ``D_p``.

    ``P * [-(K/2) log(1 - sigma_N_sq/(K D_p)) + 0.5 log(1 + sigma_X_sq/D_p)]``,
    defined for ``D_p > sigma_N_sq / K``.
    """
    if not D_p > 0:
        raise errors.DistortionNonpositive(f"D_p must be positive, got {D_p}")
    ratio = sigma_N_sq / (K * D_p)
    if not ratio < 1:
        raise errors.DistortionBelowFloor(
            f"D_p={D_p} must exceed sigma_N_sq/K = {sigma_N_sq / K}")
    nats = P * (-0.5 * K * math.log1p(-ratio) + 0.5 * math.log1p(sigma_X_sq / D_p))
    return from_nats(nats, unit)


def sum_rate_closed_form_total(sigma_X_sq, sigma_N_sq, K, P, D_total, unit=RateUnit.BITS):
    """Closed form with a total distortion budget split evenly over dimensions."""
    return sum_rate_closed_form(sigma_X_sq, sigma_N_sq, K, P, D_total / P, unit)


def classic_comparison_sum_rate(sigma_X_sq, sigma_N_sq, K, P, D_p, unit=RateUnit.BITS):
    """Identical-instance sum rate without the unbiasedness constraint.

    Comparison only: uses the MMSE accounting of the classic CEO problem,
    which reaches zero rate once ``D_p >= sigma_X_sq``.
    """
    if not D_p > 0:
        raise errors.DistortionNonpositive(f"D_p must be positive, got {D_p}")
    floor = 1.0 / (1.0 / sigma_X_sq + K / sigma_N_sq)
    if not D_p > floor:
        raise errors.DistortionBelowFloor(f"D_p={D_p} must exceed the MMSE floor {floor}")
    if D_p >= sigma_X_sq:
        return 0.0
    arg = (sigma_N_sq / K) * (1.0 / D_p - 1.0 / sigma_X_sq)
    nats = P * (-0.5 * K * math.log1p(-arg) + 0.5 * math.log(sigma_X_sq / D_p))
    return from_nats(nats, unit)


def _dim_rate(spec, p, D):
    """(rate in nats, water level) of dimension ``p`` at distortion ``D``."""
    r, lam = _waterfill_exact(spec.sigma_N_sq[:, p], D) or \
        _waterfill_bisect(spec.sigma_N_sq[:, p], D)[:2]
    return r.sum() + 0.5 * math.log1p(spec.sigma_X_sq[p] / D), lam


def _marginal(spec, p, D):
    """-dR_p/dD: the water level enters through the envelope theorem."""
    _, lam = _dim_rate(spec, p, D)
    sx = spec.sigma_X_sq[p]
    return lam / D ** 2 + sx / (2.0 * D * (D + sx))


def _bracket_root(f, x0, step=2.0, max_iter=400):
    """Expand around ``x0`` until the decreasing function ``f`` changes sign."""
    lo = hi = x0
    flo = fhi = f(x0)
    n = 0
    while flo < 0:
        lo -= step
        flo = f(lo)
        n += 1
        if n > max_iter:
            raise RuntimeError("failed to bracket root")
    while fhi > 0:
        hi += step
        fhi = f(hi)
        n += 1
        if n > max_iter:
            raise RuntimeError("failed to bracket root")
    return lo, hi


def _D_for_marginal(spec, p, nu, floor, counter):
    # solve -dR_p/dD = nu over x = log(D - floor); the marginal is decreasing in D
    scale = max(floor, spec.sigma_X_sq[p])

    def f(x):
        counter[0] += 1
        return math.log(_marginal(spec, p, floor + math.exp(x))) - math.log(nu)

    x0 = math.log(scale)
    lo, hi = _bracket_root(f, x0)
    x = optimize.brentq(f, lo, hi, xtol=1e-14, rtol=8.9e-16, maxiter=500)
    return floor + math.exp(x)


def _build_result(spec, D_p, D_total, unit, method, stats):
    r = np.zeros((spec.K, spec.P))
    per_dim = np.zeros(spec.P)
    for p in range(spec.P):
        r[:, p] = waterfill_noise_rates(spec, p, D_p[p], RateUnit.NATS)
        per_dim[p] = r[:, p].sum() + 0.5 * math.log1p(spec.sigma_X_sq[p] / D_p[p])
    rates = RateAllocation(from_nats(r, unit),
                           [induced_distortion(spec, p, r[:, p], RateUnit.NATS)
                            for p in range(spec.P)], unit)
    per_dim = from_nats(per_dim, unit)
    return SumRateResult(float(per_dim.sum()), DistortionAllocation(D_p, D_total), rates,
                         per_dim, method, RateUnit.parse(unit), stats)


def sum_rate_numeric(spec, D_total, unit=RateUnit.BITS):
    """Minimum sum rate at total distortion ``D_total`` for any instance.

    Each dimension's rate ``R_p(D_p)`` is convex and decreasing, so the
    optimal split equalises the marginals ``-dR_p/dD_p``. The common
    marginal is found by a bracketed root search on the total distortion,
    each dimension's ``D_p`` by an inner root search on its own marginal.
    """
    floors = distortion_floors(spec)
    if not D_total > floors.sum():
        raise errors.InfeasibleTotalDistortion(
            f"D_total={D_total} must exceed the summed distortion floors {floors.sum()}")
    counter = [0]
    if spec.P == 1:
        D_p = np.array([float(D_total)])
        stats = {"outer_iterations": 0, "inner_evaluations": 0, "residual": 0.0}
        return _build_result(spec, D_p, D_total, unit, "numeric", stats)

    def split(log_nu):
        nu = math.exp(log_nu)
        return np.array([_D_for_marginal(spec, p, nu, floors[p], counter)
                         for p in range(spec.P)])

    def g(log_nu):
        return math.log(split(log_nu).sum() - floors.sum()) - math.log(D_total - floors.sum())

    # start from the marginal of an even split above the floors
    even = floors + (D_total - floors.sum()) / spec.P
    x0 = math.log(np.mean([_marginal(spec, p, even[p]) for p in range(spec.P)]))
    lo, hi = _bracket_root(g, x0)
    if lo == hi:
        log_nu, iterations = lo, 0
    else:
        log_nu, info = optimize.brentq(g, lo, hi, xtol=1e-13, rtol=8.9e-16, maxiter=500,
                                       full_output=True)
        iterations = info.iterations
    D_p = split(log_nu)
    # remove the last rounding so the budget is met with equality
    excess = D_p - floors
    D_p = floors + excess * (D_total - floors.sum()) / excess.sum()
    stats = {"outer_iterations": int(iterations), "inner_evaluations": counter[0],
             "residual": float(abs(D_p.sum() - D_total)), "marginal": math.exp(log_nu)}
    return _build_result(spec, D_p, D_total, unit, "numeric", stats)


def sum_rate(spec, D_total, unit=RateUnit.BITS):
    """Sum-rate-distortion function, routed to the closed form when possible."""
    if spec.is_identical:
        D_p = D_total / spec.P
        value = sum_rate_closed_form(spec.sigma_X_sq[0], spec.sigma_N_sq[0, 0], spec.K,
                                     spec.P, D_p, unit)
        result = _build_result(spec, np.full(spec.P, D_p), D_total, unit, "closed_form", {})
        # keep the certificate but report the closed-form value itself
        return SumRateResult(value, result.allocation, result.rates,
                             np.full(spec.P, value / spec.P), "closed_form",
                             RateUnit.parse(unit), {})
    return sum_rate_numeric(spec, D_total, unit)


def distortion_for_sum_rate(spec, R_target, unit=RateUnit.BITS, rate_ceiling=None,
                            min_excess=1e-9, rtol=1e-9):
    """Total distortion at which the minimum sum rate equals ``R_target``.

    ``rate_ceiling`` defaults to the sum rate at ``(1 + min_excess)`` times
    the summed distortion floors, the closest point the solver resolves.
    """
    if not R_target > 0:
        raise errors.ValidationError(f"R_target must be positive, got {R_target}")
    target = to_nats(float(R_target), unit)
    F = distortion_floors(spec).sum()
    if rate_ceiling is None:
        ceiling = sum_rate_numeric(spec, F * (1 + min_excess), RateUnit.NATS).sum_rate
    else:
        ceiling = to_nats(float(rate_ceiling), unit)
    if target > ceiling:
        raise errors.RateUnreachable(
            f"R_target={R_target} {RateUnit.parse(unit).value} exceeds the rate ceiling "
            f"{from_nats(ceiling, unit)}")

    def f(x):
        R = sum_rate_numeric(spec, F + math.exp(x), RateUnit.NATS).sum_rate
        return math.log(R) - math.log(target)

    lo, hi = _bracket_root(f, math.log(F + sum(spec.sigma_X_sq)))
    x = optimize.brentq(f, lo, hi, xtol=1e-14, rtol=rtol, maxiter=500)
    return F + math.exp(x)


def sweep_sum_rate(spec, D_grid, unit=RateUnit.BITS, workers=None):
    """Sum-rate results over a grid of total distortions (order preserved)."""
    D_grid = [float(D) for D in D_grid]
    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(lambda D: sum_rate(spec, D, unit), D_grid))
    return [sum_rate(spec, D, unit) for D in D_grid]


def write_curve_csv(results, fh):
    """Write a sweep as CSV with header ``D,sum_rate_bits,per_dim_json``."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["D", "sum_rate_bits", "per_dim_json"])
    for res in results:
        bits = from_nats(to_nats(res.sum_rate, res.unit), RateUnit.BITS)
        per_dim = from_nats(to_nats(np.asarray(res.per_dim_rate), res.unit), RateUnit.BITS)
        writer.writerow([repr(res.allocation.D_total), repr(bits),
                         json.dumps([float(v) for v in per_dim])])
