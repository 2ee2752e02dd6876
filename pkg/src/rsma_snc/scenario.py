"""Experiment configuration: scenario, QoS targets, link budget and traffic.

A :class:`Scenario` is immutable once built; every other module takes one
as input.  Scenario files are flat ``key = value`` text with dotted section
names, e.g.::

    scheme = rsma
    radio.shadow_seed = 3
    geometry.distances_m = [200, 300]

An empty file reproduces the default evaluation setup.
"""

from __future__ import annotations

import ast
import enum
import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np


class ScenarioError(ValueError):
    """Raised for invalid configuration values or malformed scenario files."""


class Scheme(str, enum.Enum):
    RSMA = "rsma"
    NOMA = "noma"
    OMA = "oma"


class StreamId(str, enum.Enum):
    X11 = "x11"
    X12 = "x12"
    X1 = "x1"
    X2 = "x2"

    @property
    def device(self) -> int:
        return 1 if self is not StreamId.X2 else 2


# SIC decoding order (first decoded first).  OMA has no SIC; the order only
# fixes the reporting sequence.
DECODING_ORDER = {
    Scheme.RSMA: (StreamId.X11, StreamId.X12, StreamId.X2),
    Scheme.NOMA: (StreamId.X1, StreamId.X2),
    Scheme.OMA: (StreamId.X1, StreamId.X2),
}


def streams_for(scheme: Scheme) -> tuple[StreamId, ...]:
    return DECODING_ORDER[Scheme(scheme)]


class HHatMode(str, enum.Enum):
    MEAN_POWER = "mean_power"
    FIXED = "fixed"
    MARGINALIZE = "marginalize"


@dataclass(frozen=True)
class AlgoConstants:
    pi_th: float = 1e-15
    m_iter: int = 200
    psi_theta: float = 1.0
    psi_th: float = 1e-6
    lambda_s: float = 1e-6
    phi_th: float = 1e-15

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ScenarioError(f"algo.{f.name} must be strictly positive")
        if int(self.m_iter) != self.m_iter or self.m_iter < 1:
            raise ScenarioError("algo.m_iter must be an integer >= 1")


@dataclass(frozen=True)
class QosTarget:
    """Delay threshold (slots), SDVP threshold and DEP threshold of a stream."""

    w_th_slots: int = 4
    xi_th: float = 1e-6
    eps_th: float = 1e-5

    def __post_init__(self):
        if int(self.w_th_slots) != self.w_th_slots or self.w_th_slots < 0:
            raise ScenarioError("w_th_slots must be a non-negative integer")
        if not 0.0 < self.xi_th < 1.0:
            raise ScenarioError("xi_th must lie in (0, 1)")
        if not 0.0 < self.eps_th < 1.0:
            raise ScenarioError("eps_th must lie in (0, 1)")


@dataclass(frozen=True)
class Scenario:
    scheme: Scheme = Scheme.RSMA
    cell_radius_m: float = 500.0
    bandwidth_hz: float = 2e6
    slot_s: float = 5e-4
    n0_cu: int = 1000
    np_cu: tuple[int, int] = (50, 50)
    noise_psd_dbm_hz: float = -176.0
    pathloss_exp: float = 2.5
    shadow_sigma_db: float = 8.0
    shadow_seed: int = 0
    distances_m: tuple[float, float] = (250.0, 250.0)
    arrival_rate_bps: float = 2.5e5
    p_max_w: float = 1.0
    b_min_bits: float = 80.0
    b_max_bits: float = 500.0
    h_hat_mode: HHatMode = HHatMode.MEAN_POWER
    h_hat_sq: tuple[float, float] | None = None
    h_hat_samples: int = 64
    algo: AlgoConstants = field(default_factory=AlgoConstants)

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "h_hat_mode", HHatMode(self.h_hat_mode))
        object.__setattr__(self, "np_cu", tuple(int(n) for n in self.np_cu))
        object.__setattr__(self, "distances_m", tuple(float(d) for d in self.distances_m))
        if self.h_hat_sq is not None:
            object.__setattr__(self, "h_hat_sq", tuple(float(h) for h in self.h_hat_sq))

        if len(self.np_cu) != 2 or len(self.distances_m) != 2:
            raise ScenarioError("np_cu and distances_m need one entry per device")
        if any(n < 0 for n in self.np_cu):
            raise ScenarioError("pilot lengths must be non-negative")
        if self.n0_cu - sum(self.np_cu) <= 0:
            raise ScenarioError("n0_cu - sum(np_cu) must be positive (no data blocklength left)")
        for d in self.distances_m:
            if not 0.0 < d <= self.cell_radius_m:
                raise ScenarioError(f"distance {d} m outside (0, cell_radius_m={self.cell_radius_m}]")
        if self.b_min_bits > self.b_max_bits:
            raise ScenarioError("b_min_bits must not exceed b_max_bits")
        if self.b_min_bits < 1:
            raise ScenarioError("b_min_bits must be at least 1")
        if not self.p_max_w > 0:
            raise ScenarioError("p_max_w must be positive")
        if not self.arrival_rate_bps > 0:
            raise ScenarioError("arrival_rate_bps must be positive")
        for name in ("bandwidth_hz", "slot_s", "pathloss_exp"):
            if not getattr(self, name) > 0:
                raise ScenarioError(f"{name} must be positive")
        if self.shadow_sigma_db < 0:
            raise ScenarioError("shadow_sigma_db must be non-negative")
        if self.h_hat_mode is HHatMode.FIXED:
            if self.h_hat_sq is None or len(self.h_hat_sq) != 2 or min(self.h_hat_sq) < 0:
                raise ScenarioError("h_hat_mode=fixed needs csi.h_hat_sq with two non-negative values")
        if self.h_hat_samples < 1:
            raise ScenarioError("csi.samples must be >= 1")

    @property
    def n_d_cu(self) -> int:
        """Data channel uses per slot after pilots."""
        return self.n0_cu - sum(self.np_cu)

    @property
    def noise_power_w(self) -> float:
        return 10.0 ** ((self.noise_psd_dbm_hz - 30.0) / 10.0) * self.bandwidth_hz

    def blocklength(self, stream: StreamId) -> int:
        """Data CUs seen by one stream; OMA gives each device half the slot."""
        if self.scheme is Scheme.OMA:
            return self.n_d_cu // 2
        return self.n_d_cu

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)

    def digest(self) -> str:
        return hashlib.sha256(repr(self).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class LinkBudget:
    zeta: float
    mean_snr_per_watt: float
    pilot_snr: float
    rho_sq: float
    sigma_e_sq: float


def shadowing_db(s: Scenario) -> np.ndarray:
    """Static per-device shadowing realisation drawn from ``shadow_seed``."""
    rng = np.random.default_rng(s.shadow_seed)
    return rng.normal(0.0, s.shadow_sigma_db, size=2)


def estimation_variances(pilot_snr: float, n_pilot: float) -> tuple[float, float]:
    """Return (rho^2, sigma_e^2) of the MMSE estimate and its error."""
    if pilot_snr < 0 or n_pilot < 0:
        raise ScenarioError("pilot SNR and pilot length must be non-negative")
    g = pilot_snr * n_pilot
    return g / (1.0 + g), 1.0 / (1.0 + g)


def derive_link_budget(s: Scenario) -> tuple[LinkBudget, LinkBudget]:
    x_db = shadowing_db(s)
    out = []
    for u in range(2):
        d = s.distances_m[u]
        if d <= 0:
            raise ScenarioError("device distance must be positive")
        zeta = d ** (-s.pathloss_exp) * 10.0 ** (x_db[u] / 10.0)
        snr_w = zeta / s.noise_power_w
        pilot_snr = s.p_max_w * snr_w
        rho_sq, sig_sq = estimation_variances(pilot_snr, s.np_cu[u])
        out.append(LinkBudget(zeta, snr_w, pilot_snr, rho_sq, sig_sq))
    return out[0], out[1]


def slots_from_ms(s: Scenario, t_ms: float) -> int:
    if t_ms < 0:
        raise ScenarioError("time must be non-negative")
    # Round to 1e-9 first so 2.0 / 0.5 style ratios do not floor to 3.
    return int(math.floor(round(t_ms / (s.slot_s * 1000.0), 9)))


def arrival_bits_per_slot(s: Scenario, stream: StreamId, alpha: float = 0.5) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ScenarioError("alpha must lie in [0, 1]")
    per_device = s.arrival_rate_bps * s.slot_s
    stream = StreamId(stream)
    if stream is StreamId.X11:
        return alpha * per_device
    if stream is StreamId.X12:
        return (1.0 - alpha) * per_device
    return per_device


def h_hat_sq_samples(s: Scenario, budgets=None) -> list[tuple[float, float]]:
    """Conditioning values of |h_hat_u|^2 used by the analytical path.

    Marginalize mode returns ``h_hat_samples`` seeded draws from the
    exponential law of |h_hat|^2 (mean rho^2); results are averaged over them.
    """
    b1, b2 = budgets or derive_link_budget(s)
    if s.h_hat_mode is HHatMode.MEAN_POWER:
        return [(b1.rho_sq, b2.rho_sq)]
    if s.h_hat_mode is HHatMode.FIXED:
        return [tuple(s.h_hat_sq)]
    rng = np.random.default_rng(np.random.SeedSequence([s.shadow_seed, 0x48A7]))
    draws = rng.exponential(1.0, size=(s.h_hat_samples, 2)) * [b1.rho_sq, b2.rho_sq]
    return [tuple(row) for row in draws]


# ---------------------------------------------------------------------------
# scenario files

_ENUMS = {"scheme": Scheme, "h_hat_mode": HHatMode}

_KEYS = {
    "scheme": "scheme",
    "geometry.cell_radius_m": "cell_radius_m",
    "geometry.distances_m": "distances_m",
    "radio.bandwidth_hz": "bandwidth_hz",
    "radio.slot_s": "slot_s",
    "radio.n0_cu": "n0_cu",
    "radio.np_cu": "np_cu",
    "radio.noise_psd_dbm_hz": "noise_psd_dbm_hz",
    "radio.pathloss_exp": "pathloss_exp",
    "radio.shadow_sigma_db": "shadow_sigma_db",
    "radio.shadow_seed": "shadow_seed",
    "traffic.arrival_rate_bps": "arrival_rate_bps",
    "limits.p_max_w": "p_max_w",
    "limits.b_min_bits": "b_min_bits",
    "limits.b_max_bits": "b_max_bits",
    "csi.h_hat_mode": "h_hat_mode",
    "csi.h_hat_sq": "h_hat_sq",
    "csi.samples": "h_hat_samples",
}
_ALGO_KEYS = {f"algo.{f.name}": f.name for f in fields(AlgoConstants)}


def _parse_value(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw.strip().strip('"').strip("'")


def parse_scenario_text(text: str) -> Scenario:
    kwargs, algo = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        value = _parse_value(raw)
        if key in _KEYS:
            name = _KEYS[key]
            if name in _ENUMS:
                try:
                    value = _ENUMS[name](str(value).lower())
                except ValueError:
                    raise ScenarioError(f"line {lineno}: bad value {raw!r} for {key}") from None
            kwargs[name] = value
        elif key in _ALGO_KEYS:
            algo[_ALGO_KEYS[key]] = value
        else:
            raise ScenarioError(f"line {lineno}: unknown key {key!r}")
    if algo:
        kwargs["algo"] = AlgoConstants(**algo)
    try:
        return Scenario(**kwargs)
    except TypeError as exc:
        raise ScenarioError(str(exc)) from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(2, "scenario file not found", str(path))
    return parse_scenario_text(path.read_text(encoding="utf-8"))
