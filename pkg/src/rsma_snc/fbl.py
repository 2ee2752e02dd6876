"""Finite-blocklength decoding error probability (normal approximation)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .channel import SinrDistribution, expect

LN2 = math.log(2.0)
SINR_FLOOR = 1e-12


@dataclass(frozen=True)
class CodingPoint:
    b_bits: float
    n_d_cu: int

    def __post_init__(self):
        if self.b_bits < 1:
            raise ValueError("b_bits must be >= 1")
        if self.n_d_cu < 1:
            raise ValueError("n_d_cu must be >= 1")

    @property
    def rate_bpcu(self) -> float:
        return self.b_bits / self.n_d_cu


def q_function(x):
    """Gaussian tail probability Q(x) = P(Z > x)."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def fbl_argument(cp: CodingPoint, sinr):
    """Argument of Q in the normal approximation; ``sinr`` must be positive."""
    sinr = np.asarray(sinr, dtype=float)
    capacity = np.log1p(sinr)
    # 1 - (1+g)^-2 written to stay accurate for tiny g
    dispersion = sinr * (2.0 + sinr) / (1.0 + sinr) ** 2
    return (capacity - cp.rate_bpcu * LN2) / np.sqrt(dispersion / cp.n_d_cu)


def dep_instant_array(cp: CodingPoint, sinr):
    """Vectorised DEP; SINRs below ``SINR_FLOOR`` (including 0) fail surely."""
    sinr = np.asarray(sinr, dtype=float)
    safe = np.maximum(sinr, SINR_FLOOR)
    with np.errstate(over="ignore", invalid="ignore"):
        out = q_function(fbl_argument(cp, safe))
    return np.where(sinr < SINR_FLOOR, 1.0, out)


def dep_instant(cp: CodingPoint, sinr: float) -> float:
    if not sinr > 0:
        raise ValueError(f"SINR must be positive, got {sinr}")
    return float(dep_instant_array(cp, sinr))


def dep_expected(cp: CodingPoint, d: SinrDistribution) -> float:
    """E[dep_instant] over the SINR law, clamped to [0, 1]."""
    val = expect(d, lambda x: dep_instant_array(cp, x))
    return min(1.0, max(0.0, val))
