"""Acceptance criteria, one test per criterion.

Each test prints ``ACCEPTANCE nn: PASS|FAIL detail`` at the contract
tolerance and then asserts the same condition.
"""

import math

import numpy as np
import pytest

from oracles import log_binomial_inv_mgf_by_sum, log_poisson_mgf_by_sum
from rsma_snc.channel import QUAD_ATOL, QUAD_RTOL, build_sinr_distributions, pdf, sample_exact_sinrs
from rsma_snc.cli import DEFAULT_SWEEPS, _apply_axis, _sweep_values
from rsma_snc.fbl import CodingPoint, dep_instant_array
from rsma_snc.optimizer import REFERENCE_MARGINS, ProblemKind, compare_schemes, tsso
from rsma_snc.scenario import QosTarget, Scenario, Scheme, StreamId, arrival_bits_per_slot, streams_for
from rsma_snc.simulator import SimConfig, analytic_dep, run, validate_bound, validation_operating_point
from rsma_snc.snc import (
    ArrivalModel,
    ServiceModel,
    SncKernel,
    min_deconvolution_mgf,
    theta_max,
    ub_objective,
    ub_sdvp,
)

RSMA = streams_for(Scheme.RSMA)
SIM_SLOTS = 10_000_000
SIM_W_MAX = 40


@pytest.fixture(scope="module")
def scenario():
    return Scenario()


@pytest.fixture(scope="module")
def validation(scenario):
    op = validation_operating_point(scenario)
    cfg = SimConfig(slots=SIM_SLOTS, seed=0, w_max=SIM_W_MAX)
    return validate_bound(scenario, op, cfg=cfg, sim=run(scenario, op, cfg))


def test_01_bound_validity(validation, acceptance):
    parts, ok = [], True
    for q, r in validation.items():
        g = r.well_sampled
        gap = r.ub[g] - (r.sim[g] - 3 * r.stderr[g])
        ok &= r.bound_holds and g.any()
        parts.append(f"{q.value}: {g.sum()} well-sampled w, min(ub - sim + 3se) = {gap.min():.3g}")
    acceptance(1, ok, "; ".join(parts))
    assert ok


def test_02_log_slope_agreement(validation, acceptance):
    parts, ok = [], True
    for q, r in validation.items():
        err = r.slope_rel_error
        ok &= math.isfinite(err) and err <= 0.25
        parts.append(f"{q.value}: ub {r.slope_ub:.4f} sim {r.slope_sim:.4f} rel {err:.3f} "
                     f"on w={r.w[r.fitted].tolist()}")
    acceptance(2, ok, "; ".join(parts))
    assert ok


def _l1_histogram(d, x, bins=100):
    """L1 distance between the analytic pdf and a density histogram of ``x``."""
    counts, edges = np.histogram(x, bins=bins)
    width = np.diff(edges)
    emp = counts / (len(x) * width)
    mids = 0.5 * (edges[1:] + edges[:-1])
    return float(np.sum(np.abs(emp - pdf(d, mids)) * width))


def test_03_pdf_oracle(scenario, budgets, acceptance):
    powers = {q: scenario.p_max_w for q in RSMA}
    laws = build_sinr_distributions(scenario, powers, (budgets[0].rho_sq, budgets[1].rho_sq), budgets)
    draws = sample_exact_sinrs(scenario, powers, np.random.default_rng(3), 1_000_000, budgets)
    l1 = {q: _l1_histogram(laws[q], draws[q]) for q in (StreamId.X2, StreamId.X12, StreamId.X11)}
    ok = all(v <= 0.02 for v in l1.values())
    acceptance(3, ok, "; ".join(f"{q.value}: L1 {v:.4f}" for q, v in l1.items()) + " (limit 0.02)")
    assert ok


def _power_for_dep(s, q, b, others, target):
    from scipy.optimize import brentq

    def gap(lp):
        return math.log(max(analytic_dep(s, q, b, {**others, q: math.exp(lp)}), 1e-300)) - math.log(target)
    return math.exp(brentq(gap, -60.0, 0.0, xtol=1e-8))


def test_04_dep_oracle(scenario, budgets, acceptance):
    full = {q: scenario.p_max_w for q in RSMA}
    rng = np.random.default_rng(4)
    parts, ok = [], True
    for q, b in ((StreamId.X2, 160.0), (StreamId.X12, 80.0), (StreamId.X11, 80.0)):
        for target in (1e-1, 1e-3, 1e-6):
            p = {**full, q: _power_for_dep(scenario, q, b, full, target)}
            want = analytic_dep(scenario, q, b, p)
            x = sample_exact_sinrs(scenario, p, rng, 1_000_000, budgets)[q]
            mc = float(dep_instant_array(CodingPoint(b, scenario.n_d_cu), x).mean())
            rel = abs(want / mc - 1.0)
            ok &= rel <= 0.02
            parts.append(f"{q.value}@{want:.1e}: {rel:.1e}")
    acceptance(4, ok, "relative gaps " + ", ".join(parts) + " (limit 2%)")
    assert ok


CONVEXITY_BATTERY = [
    # (arrival rate bps, power scale on the validation point, w slots)
    (2.5e5, 1.0, 4), (2.5e5, 1.2, 1), (2.4e5, 1.0, 8), (2.2e5, 0.95, 2), (2.0e5, 1.5, 4),
    (1.5e5, 0.9, 6), (1.0e5, 1.0, 10), (2.5e5, 2.0, 3), (1.8e5, 1.1, 5), (5.0e4, 0.8, 12),
]


def test_05_convexity(scenario, acceptance):
    base = validation_operating_point(scenario)
    worst, kernels = math.inf, 0
    for rate, scale, w in CONVEXITY_BATTERY:
        s = Scenario(arrival_rate_bps=rate)
        powers = {q: min(s.p_max_w, v[1] * scale) for q, v in base.items()}
        for q in RSMA:
            b = base[q][0]
            k = SncKernel(ArrivalModel(arrival_bits_per_slot(s, q)),
                          ServiceModel(b, analytic_dep(s, q, b, powers)), w)
            t = np.linspace(0.0, theta_max(k).lo, 202)[1:-1]
            h = t[1] - t[0]
            f = np.array([ub_objective(k, x) for x in t])
            worst = min(worst, float(((f[:-2] - 2 * f[1:-1] + f[2:]) / h ** 2).min()))
            kernels += 1
    ok = worst >= -1e-9
    acceptance(5, ok, f"{kernels} kernels from {len(CONVEXITY_BATTERY)} scenarios, "
                      f"min second divided difference {worst:.3g} (limit -1e-9)")
    assert ok


UB_RTOL = 1e-9


def _violations(values, direction, atol, rtol):
    """Steps against ``direction`` (+1 increasing, -1 decreasing) beyond tolerance."""
    step = direction * np.diff(values)
    return int(np.sum(step < -(atol + rtol * np.abs(values[1:]))))


def test_06_monotonicity(scenario, acceptance):
    q = StreamId.X12
    lam = arrival_bits_per_slot(scenario, q)
    w = QosTarget().w_th_slots
    full = {x: scenario.p_max_w for x in RSMA}

    def bound(b, dep):
        return ub_sdvp(SncKernel(ArrivalModel(lam), ServiceModel(b, dep), w), scenario.algo).value

    ps = np.linspace(0.25, 0.4, 20)
    dep_p = np.array([analytic_dep(scenario, q, 400.0, {**full, q: p}) for p in ps])
    ub_p = np.array([bound(400.0, d) for d in dep_p])
    bs = np.linspace(scenario.b_min_bits, scenario.b_max_bits, 20)
    dep_b = np.array([analytic_dep(scenario, q, b, {**full, q: 0.3}) for b in bs])
    ub_b = np.array([bound(b, d) for b, d in zip(bs, dep_b)])
    checks = {
        "dep(p) decreasing": _violations(dep_p, -1, QUAD_ATOL, QUAD_RTOL),
        # the bound spans many decades, so its steps are judged relatively
        "ub(p) decreasing": _violations(ub_p, -1, 0.0, UB_RTOL),
        "dep(B) increasing": _violations(dep_b, +1, QUAD_ATOL, QUAD_RTOL),
        "ub(B) increasing": _violations(ub_b, +1, 0.0, UB_RTOL),
    }
    ok = not any(checks.values())
    detail = ", ".join(f"{k}: {v} violations" for k, v in checks.items())
    if checks["ub(B) increasing"]:
        i = int(np.argmin(ub_b))
        detail += f"; ub(B) minimum {ub_b[i]:.3g} at B={bs[i]:.1f}"
    acceptance(6, ok, detail)
    assert ok


def _bracket_monotone(trace):
    prev_lo, prev_hi = -math.inf, math.inf
    for mid, lo, hi, _, _ in trace:
        if not (prev_lo <= lo <= hi <= prev_hi and prev_lo <= mid <= prev_hi):
            return False
        prev_lo, prev_hi = lo, hi
    return True


def test_07_tsso_convergence(scenario, acceptance):
    parts, ok = [], True
    for kind in (ProblemKind.P1_MAX_PACKET, ProblemKind.P2_MIN_POWER):
        first, again = tsso(scenario, kind), tsso(scenario, kind)
        for q, sol in first.solutions.items():
            rerun = again.solutions[q]
            same = (sol.trace == rerun.trace and sol.b_bits == rerun.b_bits and sol.p_w == rerun.p_w)
            good = 5 <= sol.iterations <= 20 and _bracket_monotone(sol.trace) and same
            ok &= good
            parts.append(f"{kind.value}/{q.value}: {sol.iterations} it"
                         + ("" if sol.feasible else f" (infeasible, {sol.binding})"))
    acceptance(7, ok, ", ".join(parts) + " (band [5, 20])")
    assert ok


def test_08_full_power_and_even_split(scenario, acceptance):
    top = tsso(scenario, ProblemKind.P1_MAX_PACKET).total_bits
    grid = [f * scenario.p_max_w for f in (0.1, 0.3, 0.5, 0.7, 0.9)]
    lower = [tsso(scenario, ProblemKind.P1_MAX_PACKET, power_w=p).total_bits for p in grid]
    p1_ok = all(top > b for b in lower)
    p2 = tsso(scenario, ProblemKind.P2_MIN_POWER)
    p2_ok = p2.alpha_star == 0.5 and all(sol.b_bits == scenario.b_min_bits for sol in p2.solutions.values())
    ok = p1_ok and p2_ok
    acceptance(8, ok, f"P1 sum B at p_max {top:.2f} vs grid {[round(b, 2) for b in lower]} "
                      f"(strict > {'holds' if p1_ok else 'fails'}); "
                      f"P2 alpha*={p2.alpha_star}, B=B_min {'holds' if p2_ok else 'fails'}")
    assert ok


def test_09_scheme_ordering(scenario, acceptance):
    bad, points, lines = [], 0, []
    for kind in (ProblemKind.P1_MAX_PACKET, ProblemKind.P2_MIN_POWER):
        for axis, (start, stop, step) in DEFAULT_SWEEPS.items():
            gains = []
            for v in _sweep_values(start, stop, step):
                points += 1
                cmp = compare_schemes(scenario, kind, _apply_axis(scenario, QosTarget(), axis, v))
                t = cmp.totals()
                r, n, o = t[Scheme.RSMA], t[Scheme.NOMA], t[Scheme.OMA]
                feasible = all(res.feasible for res in cmp.results.values())
                ordered = r >= n >= o if kind is ProblemKind.P1_MAX_PACKET else r <= n <= o
                if not (feasible and ordered):
                    bad.append(f"{kind.value}/{axis}={v:g}" + ("" if feasible else " infeasible"))
                gains.append(cmp.margins())
            ref = REFERENCE_MARGINS[f"{kind.value}_{axis}"]
            noma = [g[Scheme.NOMA] for g in gains]
            lines.append(f"{kind.value}/{axis}: RSMA vs NOMA {min(noma):+.3f}..{max(noma):+.3f} "
                         f"(reference {ref[0]:+.3f}/{ref[1]:+.3f})")
    ok = not bad
    print("\n".join(lines))
    acceptance(9, ok, f"{points - len(bad)}/{points} sweep points ordered among feasible solutions"
                      + (f"; failing: {', '.join(bad[:3])}{' ...' if len(bad) > 3 else ''}" if bad else ""))
    assert ok


def test_10_finite_horizon_oracle(acceptance):
    rng = np.random.default_rng(10)
    worst, kernels = -math.inf, 0
    horizon = 64
    while kernels < 5:
        lam = float(rng.uniform(5, 150))
        b = float(rng.integers(80, 500))
        eps = float(rng.uniform(0.0, 0.5))
        w = int(rng.integers(1, 9))
        if lam >= (1 - eps) * b:
            continue
        k = SncKernel(ArrivalModel(lam), ServiceModel(b, eps), w)
        theta = ub_sdvp(k).theta_star
        finite = min_deconvolution_mgf(
            lambda th, v, t: log_poisson_mgf_by_sum(lam * (t - v), th),
            lambda th, v, s: log_binomial_inv_mgf_by_sum(s - v, 1 - eps, b, th),
            theta, horizon + w, horizon)
        worst = max(worst, finite - ub_objective(k, theta))
        kernels += 1
    ok = worst <= 1e-12
    acceptance(10, ok, f"{kernels} stable kernels, max(finite - closed) = {worst:.3g} (slack 1e-12)")
    assert ok
