import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsma_snc.channel import (
    GaussianSnr,
    SinrDistribution,
    build_sinr_distributions,
    expect,
    pdf,
    sample_exact_sinrs,
    sample_gaussian_sinrs,
    sinr_cdf,
    stream_snr_terms,
)
from rsma_snc.scenario import Scenario, StreamId


def _ratio_pdf_oracle(num, den, x):
    """mpmath evaluation of int (1+y) f_N(x(1+y)) f_D(y) dy with truncated Gaussians."""
    mpmath.mp.dps = 30

    def tn(g, v):
        if v < 0:
            return mpmath.mpf(0)
        z = (v - g.mean) / g.std
        mass = mpmath.ncdf(g.mean / g.std)
        return mpmath.npdf(z) / g.std / mass

    d_lo, d_hi = den.support()
    return float(mpmath.quad(lambda y: (1 + y) * tn(num, x * (1 + y)) * tn(den, y),
                             [d_lo, den.mean, d_hi]))


def test_direct_pdf_peak():
    # [TRIVIAL] Gaussian peak value 1/(sigma sqrt(2 pi)); mass ~ 1 at 12.5 sigma
    d = SinrDistribution(GaussianSnr(5.0, 0.16))
    assert pdf(d, 5.0)[0] == pytest.approx(1 / (0.4 * math.sqrt(2 * math.pi)), rel=1e-12)
    assert pdf(d, 5.0)[0] == pytest.approx(0.9974, abs=1e-4)


@pytest.mark.parametrize("x", [0.8, 1.2, 1.6, 2.4])
def test_ratio_pdf_against_mpmath(x):
    # [DERIVED] high-precision oracle of the ratio density
    num, den = GaussianSnr(5.0, 1.0), GaussianSnr(2.0, 0.25)
    d = SinrDistribution(num, den)
    assert pdf(d, x)[0] == pytest.approx(_ratio_pdf_oracle(num, den, x), rel=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 50), st.floats(0.01, 0.5), st.floats(0.1, 20), st.floats(0.01, 0.5))
def test_ratio_pdf_normalises(mn, rn, md, rd):
    d = SinrDistribution(GaussianSnr(mn, (rn * mn) ** 2), GaussianSnr(md, (rd * md) ** 2))
    assert expect(d, lambda v: np.ones_like(v)) == pytest.approx(1.0, abs=1e-8)


def test_truncation_renormalises():
    g = GaussianSnr(0.5, 1.0)
    d = SinrDistribution(g)
    assert expect(d, lambda v: np.ones_like(v)) == pytest.approx(1.0, abs=1e-9)
    assert pdf(d, 0.0)[0] > 0 and g.cdf(-1.0) == 0.0


def test_point_mass_laws():
    d = SinrDistribution(GaussianSnr(3.0, 0.0), GaussianSnr(1.0, 0.0))
    assert d.is_point_mass and d.point() == 1.5
    assert expect(d, lambda v: v ** 2) == pytest.approx(2.25)
    with pytest.raises(ValueError):
        pdf(d, 1.0)


def test_degenerate_numerator_ratio():
    # X = c / (D + 1) with D ~ N(2, 0.1^2): E[X] against a direct D expectation
    den = GaussianSnr(2.0, 0.01)
    d = SinrDistribution(GaussianSnr(3.0, 0.0), den)
    want = expect(SinrDistribution(den), lambda y: 3.0 / (y + 1.0))
    assert expect(d, lambda v: v) == pytest.approx(want, rel=1e-9)


def test_negative_sinr_rejected():
    with pytest.raises(ValueError):
        pdf(SinrDistribution(GaussianSnr(1.0, 0.1)), -0.5)


def test_snr_term_moments(default_scenario, budgets):
    hh = (0.9, 0.7)
    p = {StreamId.X11: 0.5, StreamId.X12: 0.25, StreamId.X2: 1.0}
    g = stream_snr_terms(default_scenario, p, hh, budgets)
    gbar = 0.25 * budgets[0].mean_snr_per_watt
    assert g[StreamId.X12].mean == pytest.approx(gbar * 0.9)
    assert g[StreamId.X12].var == pytest.approx(2 * gbar ** 2 * 0.9 * budgets[0].sigma_e_sq)


def test_rsma_structure(default_scenario, budgets, full_power):
    hh = (budgets[0].rho_sq, budgets[1].rho_sq)
    d = build_sinr_distributions(default_scenario, full_power, hh, budgets)
    g = stream_snr_terms(default_scenario, full_power, hh, budgets)
    assert d[StreamId.X2].is_direct
    assert d[StreamId.X12].interference == g[StreamId.X2]
    assert d[StreamId.X11].interference.mean == pytest.approx(g[StreamId.X12].mean + g[StreamId.X2].mean)
    assert d[StreamId.X11].interference.var == pytest.approx(g[StreamId.X12].var + g[StreamId.X2].var)


def test_zero_power_stream_vanishes(default_scenario, budgets):
    # [TRIVIAL] p12 = 0: X11's interference law collapses to X2's
    p = {StreamId.X11: 1.0, StreamId.X12: 0.0, StreamId.X2: 1.0}
    hh = (budgets[0].rho_sq, budgets[1].rho_sq)
    d = build_sinr_distributions(default_scenario, p, hh, budgets)
    assert d[StreamId.X11].interference == d[StreamId.X12].interference


def test_rsma_without_x11_matches_noma(default_scenario, budgets):
    # [TRIVIAL] p11 = 0 makes RSMA's X12 identical to NOMA's X1
    hh = (budgets[0].rho_sq, budgets[1].rho_sq)
    r = build_sinr_distributions(default_scenario, {StreamId.X11: 0.0, StreamId.X12: 0.6, StreamId.X2: 0.8},
                                 hh, budgets)
    n = build_sinr_distributions(default_scenario.with_(scheme="noma"), {StreamId.X1: 0.6, StreamId.X2: 0.8},
                                 hh, budgets)
    assert r[StreamId.X12] == n[StreamId.X1]
    assert r[StreamId.X2] == n[StreamId.X2]
    assert r[StreamId.X11].point() == 0.0


def test_oma_invariant_to_other_device(budgets):
    s = Scenario(scheme="oma")
    hh = (budgets[0].rho_sq, budgets[1].rho_sq)
    a = build_sinr_distributions(s, {StreamId.X1: 0.5, StreamId.X2: 1.0}, hh, budgets)
    b = build_sinr_distributions(s, {StreamId.X1: 0.5, StreamId.X2: 0.01}, hh, budgets)
    assert a[StreamId.X1] == b[StreamId.X1]


def test_power_outside_box(default_scenario, budgets):
    with pytest.raises(ValueError):
        build_sinr_distributions(default_scenario, {StreamId.X11: 1.5, StreamId.X12: 1.0, StreamId.X2: 1.0},
                                 (1.0, 1.0), budgets)


def test_cdf_monotone_and_bounded():
    d = SinrDistribution(GaussianSnr(4.0, 0.5), GaussianSnr(1.0, 0.04))
    xs = np.linspace(0.5, 4.0, 9)
    cdf = [sinr_cdf(d, x) for x in xs]
    assert all(np.diff(cdf) >= -1e-10)
    assert 0.0 <= cdf[0] and cdf[-1] <= 1.0 + 1e-9


def test_exact_sampling_reproducible_and_unbiased(default_scenario, budgets, full_power):
    a = sample_exact_sinrs(default_scenario, full_power, np.random.default_rng(3), 200_000, budgets)
    b = sample_exact_sinrs(default_scenario, full_power, np.random.default_rng(3), 200_000, budgets)
    for q in a:
        np.testing.assert_array_equal(a[q], b[q])
    hh = (budgets[0].rho_sq, budgets[1].rho_sq)
    d = build_sinr_distributions(default_scenario, full_power, hh, budgets)
    x2 = a[StreamId.X2]
    # E|h|^2 = |h_hat|^2 + sigma_e^2 under exact sampling
    want = budgets[1].mean_snr_per_watt * (budgets[1].rho_sq + budgets[1].sigma_e_sq)
    assert abs(x2.mean() - want) < 5 * x2.std() / math.sqrt(len(x2))
    assert x2.mean() == pytest.approx(expect(d[StreamId.X2], lambda v: v), rel=1e-6)


def test_gaussian_sampling_matches_moments(default_scenario, budgets, full_power):
    x = sample_gaussian_sinrs(default_scenario, full_power, np.random.default_rng(4), 100_000, budgets)
    hh = (budgets[0].rho_sq, budgets[1].rho_sq)
    d = build_sinr_distributions(default_scenario, full_power, hh, budgets)[StreamId.X12]
    mean = expect(d, lambda v: v)
    sd = math.sqrt(expect(d, lambda v: (v - mean) ** 2))
    assert abs(x[StreamId.X12].mean() - mean) < 5 * sd / math.sqrt(100_000)
    assert x[StreamId.X12].std() == pytest.approx(sd, rel=0.02)


def test_cdf_equals_integrated_pdf():
    from rsma_snc.quadrature import gk_integrate
    d = SinrDistribution(GaussianSnr(4.0, 0.5), GaussianSnr(1.0, 0.04))
    lo, _ = d.support()
    for x in (1.5, 2.0, 2.6):
        want, _ = gk_integrate(lambda v: pdf(d, v), lo, x, atol=1e-12)
        assert sinr_cdf(d, x) == pytest.approx(want, abs=1e-9)


def test_silent_numerator_is_point_mass_at_zero():
    d = SinrDistribution(GaussianSnr(0.0, 0.0), GaussianSnr(2.0, 0.1))
    assert d.is_point_mass and d.point() == 0.0
