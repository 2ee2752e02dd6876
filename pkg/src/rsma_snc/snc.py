"""MGF-based stochastic network calculus for one stream's FCFS queue.

Arrivals per slot are Poisson(lambda) bits; service per slot is ``B`` bits
with probability ``1 - dep`` and 0 otherwise.  The delay bound is

    K(theta) = Ms(theta)^w / (1 - Ma(theta) * Ms(theta)),   0 < theta < theta_max,

minimised over the QoS exponent ``theta``.  All evaluations run in the log
domain so that tiny bounds and large MGFs neither underflow nor overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scenario import AlgoConstants

UNDERFLOW = 1e-300
LOG_UNDERFLOW = math.log(UNDERFLOW)
THETA_CAP = 1e6
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class InfeasibleKernel(ValueError):
    """No theta > 0 satisfies the stability condition."""


@dataclass(frozen=True)
class ArrivalModel:
    lambda_dag: float

    def __post_init__(self):
        if self.lambda_dag < 0:
            raise ValueError("arrival rate must be non-negative")


@dataclass(frozen=True)
class ServiceModel:
    b_bits: float
    dep: float

    def __post_init__(self):
        if not 0.0 <= self.dep <= 1.0:
            raise ValueError("dep must lie in [0, 1]")
        if self.b_bits < 0:
            raise ValueError("b_bits must be non-negative")


@dataclass(frozen=True)
class SncKernel:
    arrival: ArrivalModel
    service: ServiceModel
    w_th_slots: int

    @property
    def drift(self) -> float:
        """Mean arrivals minus mean service per slot (d/dtheta log product at 0)."""
        return self.arrival.lambda_dag - (1.0 - self.service.dep) * self.service.b_bits


def log_arrival_mgf(a: ArrivalModel, theta: float) -> float:
    with np.errstate(over="ignore"):
        return float(a.lambda_dag * math.expm1(theta)) if theta < 700 else (
            math.inf if a.lambda_dag > 0 else 0.0)


def arrival_mgf(a: ArrivalModel, theta: float) -> float:
    """E[exp(theta * a)] for Poisson(lambda) arrivals; +inf on overflow."""
    if theta < 0:
        raise ValueError("theta must be non-negative")
    val = log_arrival_mgf(a, theta)
    return math.inf if val > 709.0 else math.exp(val)


def log_service_inv_mgf(sv: ServiceModel, theta: float) -> float:
    x = -theta * sv.b_bits
    if sv.dep <= 0.0:
        return x
    if sv.dep >= 1.0:
        return 0.0
    return float(np.logaddexp(math.log(sv.dep), math.log1p(-sv.dep) + x))


def service_inv_mgf(sv: ServiceModel, theta: float) -> float:
    """E[exp(-theta * s)] for the two-point service {B w.p. 1-dep, 0 w.p. dep}."""
    if theta < 0:
        raise ValueError("theta must be non-negative")
    e = math.exp(-theta * sv.b_bits)
    return e + sv.dep * (1.0 - e)


def log_stability_product(k: SncKernel, theta: float) -> float:
    return log_arrival_mgf(k.arrival, theta) + log_service_inv_mgf(k.service, theta)


def stability_product(k: SncKernel, theta: float) -> float:
    """Ma * Ms; the kernel is admissible at ``theta`` iff this is < 1."""
    val = log_stability_product(k, theta)
    return math.inf if val > 709.0 else math.exp(val)


def log_ub_objective(k: SncKernel, theta: float) -> float:
    """log of Ms^w / (1 - Ma*Ms); +inf outside the stability region."""
    lp = log_stability_product(k, theta)
    if not lp < 0.0:
        return math.inf
    return k.w_th_slots * log_service_inv_mgf(k.service, theta) - math.log(-math.expm1(lp))


def ub_objective(k: SncKernel, theta: float) -> float:
    return math.exp(min(log_ub_objective(k, theta), 709.0))


@dataclass(frozen=True)
class ThetaRange:
    """Bracket of the stability boundary: ``lo`` stable, ``hi`` unstable."""

    lo: float
    hi: float
    steps: int

    @property
    def value(self) -> float:
        return 0.5 * (self.lo + self.hi) if math.isfinite(self.hi) else math.inf


def theta_max(k: SncKernel, algo: AlgoConstants = AlgoConstants()) -> ThetaRange:
    """Supremum of the stable theta region.

    Geometric expansion (or contraction) from ``psi_theta`` locates a
    stable/unstable pair, then bisection narrows it below ``psi_th``.
    Convexity of the log product in theta makes the stable set an interval.
    """
    if k.drift >= 0.0:
        raise InfeasibleKernel(f"unstable queue: arrival {k.arrival.lambda_dag:g} bits/slot "
                               f">= mean service {(1 - k.service.dep) * k.service.b_bits:g}")

    def stable(t):
        return log_stability_product(k, t) < 0.0

    steps = 0
    theta = algo.psi_theta
    if stable(theta):
        lo = theta
        hi = 2.0 * theta
        while stable(hi):
            steps += 1
            lo, hi = hi, 2.0 * hi
            if hi > THETA_CAP:
                return ThetaRange(lo, math.inf, steps)
    else:
        hi = theta
        lo = 0.5 * theta
        while not stable(lo):
            steps += 1
            hi, lo = lo, 0.5 * lo
            if lo < 1e-300:
                raise InfeasibleKernel("no stable theta found above 1e-300")
    tol = algo.psi_th * min(1.0, hi)
    while hi - lo > tol:
        steps += 1
        mid = 0.5 * (lo + hi)
        if stable(mid):
            lo = mid
        else:
            hi = mid
    return ThetaRange(lo, hi, steps)


def golden_section_min(f, a: float, b: float, tol: float, max_iter: int = 500):
    """Minimise a unimodal ``f`` on [a, b]; returns ``(x, f(x), iterations)``."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while it < max_iter and (b - a) > max(tol, 4 * np.finfo(float).eps * abs(c)):
        it += 1
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc, it) if fc <= fd else (d, fd, it)


@dataclass(frozen=True)
class SdvpBound:
    value: float
    log_value: float
    theta_star: float
    theta_max: float
    feasible: bool
    underflow: bool = False
    evaluations: int = 0


def ub_sdvp(k: SncKernel, algo: AlgoConstants = AlgoConstants()) -> SdvpBound:
    """Minimised delay-violation bound, clamped to <= 1.

    An unstable kernel yields ``value = 1`` with ``feasible = False``.
    """
    try:
        rng = theta_max(k, algo)
    except InfeasibleKernel:
        return SdvpBound(1.0, 0.0, math.nan, math.nan, False)
    upper = rng.lo
    theta, logv, it = golden_section_min(lambda t: log_ub_objective(k, t), 0.0, upper, algo.phi_th)
    logv = min(logv, 0.0)
    if logv < LOG_UNDERFLOW:
        return SdvpBound(0.0, logv, theta, rng.value, True, True, rng.steps + it)
    return SdvpBound(math.exp(logv), logv, theta, rng.value, True, False, rng.steps + it)


def min_deconvolution_mgf(log_ma_window, log_ms_window, theta: float, s: int, t: int) -> float:
    """Finite sum sum_{v=1}^{min(s,t)} M_A(theta, v, t) * Mbar_S(theta, v, s).

    ``log_ma_window(theta, v, t)`` / ``log_ms_window(theta, v, s)`` return the
    log MGF of cumulative arrivals over [v, t) and the log inverse-MGF of
    cumulative service over [v, s).
    """
    terms = [log_ma_window(theta, v, t) + log_ms_window(theta, v, s) for v in range(1, min(s, t) + 1)]
    if not terms:
        return 0.0
    return float(np.exp(np.logaddexp.reduce(terms)))
