"""Per-stream SINR laws under imperfect CSI, plus exact channel sampling.

Analytical path: each received-SNR term is Gaussian given the channel
estimate (mean ``gbar*|h_hat|^2``, variance ``2*gbar^2*|h_hat|^2*sigma_e^2``),
truncated at zero.  Streams decoded under co-channel interference follow the
ratio law ``N / (D + 1)`` of two independent truncated Gaussians.

Sampling path: draws ``h = h_hat + e`` per device and forms the SIC SINRs
exactly, with no Gaussian approximation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import truncnorm

from .quadrature import gk_integrate
from .scenario import (
    HHatMode,
    Scenario,
    Scheme,
    StreamId,
    derive_link_budget,
    streams_for,
)

TAIL_SIGMAS = 8.0
QUAD_ATOL = 1e-10
QUAD_RTOL = 1e-11
QUAD_PANELS = 2 ** 15

_SQRT2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianSnr:
    """Gaussian SNR term truncated to [0, inf); ``var == 0`` is a point mass."""

    mean: float
    var: float

    def __post_init__(self):
        if self.var < 0:
            raise ValueError("variance must be non-negative")

    @property
    def std(self) -> float:
        return math.sqrt(self.var)

    @property
    def degenerate(self) -> bool:
        return self.var == 0.0 or self.std <= 1e-300

    def support(self) -> tuple[float, float]:
        s = self.std
        return max(0.0, self.mean - TAIL_SIGMAS * s), max(0.0, self.mean + TAIL_SIGMAS * s)

    def mass(self) -> float:
        """Probability mass of the untruncated law on [0, inf)."""
        if self.degenerate:
            return 1.0 if self.mean >= 0 else 0.0
        return float(ndtr(self.mean / self.std))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        s = self.std
        z = (x - self.mean) / s
        out = np.exp(-0.5 * z * z) / (s * _SQRT2PI) / self.mass()
        return np.where(x >= 0.0, out, 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.degenerate:
            return (x >= self.mean).astype(float)
        lo = ndtr(-self.mean / self.std)
        val = (ndtr((x - self.mean) / self.std) - lo) / self.mass()
        return np.where(x >= 0.0, np.clip(val, 0.0, 1.0), 0.0)


@dataclass(frozen=True)
class SinrDistribution:
    """SINR law: ``numerator`` alone (direct) or ``numerator / (interference + 1)``."""

    numerator: GaussianSnr
    interference: GaussianSnr | None = None

    @property
    def is_direct(self) -> bool:
        return self.interference is None

    @property
    def is_point_mass(self) -> bool:
        if not self.numerator.degenerate:
            return False
        # a silent numerator pins the ratio at 0 whatever the interference does
        return self.is_direct or self.interference.degenerate or self.numerator.mean == 0.0

    def point(self) -> float:
        if self.is_direct:
            return self.numerator.mean
        return self.numerator.mean / (self.interference.mean + 1.0)

    def support(self) -> tuple[float, float]:
        n_lo, n_hi = self.numerator.support()
        if self.is_direct:
            return n_lo, n_hi
        d_lo, d_hi = self.interference.support()
        return n_lo / (d_hi + 1.0), n_hi / (d_lo + 1.0)


def stream_snr_terms(s: Scenario, p: dict, h_hat_sq, budgets=None) -> dict:
    """Gaussian law of every stream's own received SNR term."""
    budgets = budgets or derive_link_budget(s)
    terms = {}
    for q in streams_for(s.scheme):
        u = q.device - 1
        b = budgets[u]
        gbar = float(p[q]) * b.mean_snr_per_watt
        hh = float(h_hat_sq[u])
        terms[q] = GaussianSnr(gbar * hh, 2.0 * gbar * gbar * hh * b.sigma_e_sq)
    return terms


def _sum(a: GaussianSnr, b: GaussianSnr) -> GaussianSnr:
    return GaussianSnr(a.mean + b.mean, a.var + b.var)


def build_sinr_distributions(s: Scenario, p: dict, h_hat_sq, budgets=None) -> dict:
    """Per-stream SINR laws for power vector ``p`` (stream -> watts).

    ``h_hat_sq`` holds |h_hat_u|^2 for the two devices.
    """
    for q, pq in p.items():
        if not 0.0 <= pq <= s.p_max_w * (1 + 1e-12):
            raise ValueError(f"power of {q.value} outside [0, p_max]")
    if min(h_hat_sq) < 0:
        raise ValueError("|h_hat|^2 must be non-negative")
    g = stream_snr_terms(s, p, h_hat_sq, budgets)
    if s.scheme is Scheme.RSMA:
        return {
            StreamId.X11: SinrDistribution(g[StreamId.X11], _sum(g[StreamId.X12], g[StreamId.X2])),
            StreamId.X12: SinrDistribution(g[StreamId.X12], g[StreamId.X2]),
            StreamId.X2: SinrDistribution(g[StreamId.X2]),
        }
    if s.scheme is Scheme.NOMA:
        return {
            StreamId.X1: SinrDistribution(g[StreamId.X1], g[StreamId.X2]),
            StreamId.X2: SinrDistribution(g[StreamId.X2]),
        }
    return {q: SinrDistribution(g[q]) for q in streams_for(Scheme.OMA)}


# ---------------------------------------------------------------------------
# density and expectation

def pdf(d: SinrDistribution, x):
    """Density of the SINR law at ``x`` (scalar or array)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0):
        raise ValueError("SINR must be non-negative")
    if d.is_point_mass:
        raise ValueError("point-mass SINR law has no density")
    num, den = d.numerator, d.interference
    if d.is_direct:
        return num.pdf(x)
    out = np.zeros_like(x)
    pos = x > 0
    xp = x[pos]
    if num.degenerate:
        # X = c / (D + 1)
        c = num.mean
        out[pos] = den.pdf(c / xp - 1.0) * c / (xp * xp)
        return out
    if den.degenerate:
        k = 1.0 + den.mean
        out[pos] = k * num.pdf(xp * k)
        return out
    out[pos] = _ratio_pdf(num, den, xp)
    return out


def _ratio_pdf(num: GaussianSnr, den: GaussianSnr, x: np.ndarray) -> np.ndarray:
    """int (1+y) f_N(x(1+y)) f_D(y) dy, integrated per column on the overlap
    of the interference support with the numerator-compatible y range."""
    n_lo, n_hi = num.support()
    d_lo, d_hi = den.support()
    y_lo = np.maximum(d_lo, n_lo / x - 1.0)
    y_hi = np.minimum(d_hi, n_hi / x - 1.0)
    width = np.maximum(y_hi - y_lo, 0.0)
    live = width > 0
    out = np.zeros_like(x)
    if not live.any():
        return out
    xl, yl, wl = x[live], y_lo[live], width[live]

    def integrand(t):
        y = yl[None, :] + t[:, None] * wl[None, :]
        return (1.0 + y) * num.pdf(xl[None, :] * (1.0 + y)) * den.pdf(y) * wl[None, :]

    val, _ = gk_integrate(integrand, 0.0, 1.0, atol=0.0, rtol=1e-10, max_panels=QUAD_PANELS)
    out[live] = np.maximum(val, 0.0)
    return out


def expect(d: SinrDistribution, g) -> float:
    """E[g(SINR)] by adaptive quadrature of ``g * pdf`` over the truncated support.

    ``g`` must accept and return numpy arrays.
    """
    if d.is_point_mass:
        return float(np.asarray(g(np.array([d.point()])))[0])
    lo, hi = d.support()
    val, _ = gk_integrate(lambda x: g(x) * pdf(d, x), lo, hi, atol=QUAD_ATOL, rtol=QUAD_RTOL,
                          max_panels=QUAD_PANELS, initial_panels=8)
    return float(val)


def sinr_cdf(d: SinrDistribution, x: float) -> float:
    """P(SINR <= x), conditioning on the interference: E_D[F_N(x (1 + D))]."""
    num, den = d.numerator, d.interference
    if d.is_point_mass:
        return float(d.point() <= x)
    if d.is_direct:
        return float(num.cdf(x))
    if den.degenerate:
        return float(num.cdf(x * (1.0 + den.mean)))
    if num.degenerate:
        if x <= 0:
            return 0.0
        return float(1.0 - den.cdf(num.mean / x - 1.0))
    lo, hi = den.support()
    val, _ = gk_integrate(lambda y: den.pdf(y) * num.cdf(x * (1.0 + y)), lo, hi, atol=QUAD_ATOL,
                          max_panels=QUAD_PANELS, initial_panels=8)
    return float(min(1.0, max(0.0, val)))


# ---------------------------------------------------------------------------
# sampling

def _device_gains(s: Scenario, rng: np.random.Generator, size: int, budgets, h_hat_sq=None):
    """|h_u|^2 draws for both devices, shape (2, size)."""
    redraw = s.h_hat_mode is HHatMode.MARGINALIZE and h_hat_sq is None
    if h_hat_sq is None and not redraw:
        if s.h_hat_mode is HHatMode.FIXED:
            h_hat_sq = s.h_hat_sq
        else:
            h_hat_sq = (budgets[0].rho_sq, budgets[1].rho_sq)
    gains = np.empty((2, size))
    for u in range(2):
        b = budgets[u]
        if redraw:
            h_hat = (rng.standard_normal(size) + 1j * rng.standard_normal(size)) * math.sqrt(b.rho_sq / 2.0)
        else:
            # the law of |h_hat + e| does not depend on the phase of h_hat
            h_hat = math.sqrt(h_hat_sq[u])
        err = (rng.standard_normal(size) + 1j * rng.standard_normal(size)) * math.sqrt(b.sigma_e_sq / 2.0)
        gains[u] = np.abs(h_hat + err) ** 2
    return gains


def sample_exact_sinrs(s: Scenario, p: dict, rng: np.random.Generator, size: int,
                       budgets=None, h_hat_sq=None) -> dict:
    """Exact per-stream SINR draws (``size`` slots) from h = h_hat + e."""
    budgets = budgets or derive_link_budget(s)
    gains = _device_gains(s, rng, size, budgets, h_hat_sq)
    snr = {q: float(p[q]) * budgets[q.device - 1].mean_snr_per_watt * gains[q.device - 1]
           for q in streams_for(s.scheme)}
    return _combine(s.scheme, snr)


def sample_gaussian_sinrs(s: Scenario, p: dict, rng: np.random.Generator, size: int,
                          budgets=None, h_hat_sq=None) -> dict:
    """Draws from the Gaussian approximation (independent truncated terms)."""
    budgets = budgets or derive_link_budget(s)
    if h_hat_sq is None:
        from .scenario import h_hat_sq_samples
        h_hat_sq = h_hat_sq_samples(s, budgets)[0]
    terms = stream_snr_terms(s, p, h_hat_sq, budgets)
    snr = {}
    for q, t in terms.items():
        if t.degenerate:
            snr[q] = np.full(size, max(t.mean, 0.0))
        else:
            a = -t.mean / t.std
            snr[q] = truncnorm.rvs(a, np.inf, loc=t.mean, scale=t.std, size=size, random_state=rng)
    return _combine(s.scheme, snr)


def _combine(scheme: Scheme, snr: dict) -> dict:
    if scheme is Scheme.RSMA:
        g11, g12, g2 = snr[StreamId.X11], snr[StreamId.X12], snr[StreamId.X2]
        return {
            StreamId.X11: g11 / (g12 + g2 + 1.0),
            StreamId.X12: g12 / (g2 + 1.0),
            StreamId.X2: g2,
        }
    if scheme is Scheme.NOMA:
        return {StreamId.X1: snr[StreamId.X1] / (snr[StreamId.X2] + 1.0), StreamId.X2: snr[StreamId.X2]}
    return dict(snr)
