import numpy as np
import pytest

from peakref import (ModelParams, NormalizationUnresolved,
                     asymptotic_ratios, expected_time_to_new_max,
                     expected_time_to_zero_consumption, hitting_time_coefficients,
                     long_run_fractions, validate)
from peakref import analytics
from conftest import P0, HOMOG, BETA2_LESS

COINCIDENT = ModelParams(r=0.05, rho=0.05, mu=0.1, sigma=0.25,
                         beta1=0.2, beta2=0.1, k=1.5, lam=0.9)


def test_case_tags_and_w0():
    rep = asymptotic_ratios(P0)
    assert rep.case_tag == "Beta2Greater"
    assert rep.w0 == 0.0
    d = validate(BETA2_LESS)
    rep2 = asymptotic_ratios(BETA2_LESS)
    assert rep2.case_tag == "Beta2Less"
    assert rep2.w0 == pytest.approx(-BETA2_LESS.lam * d.gamma1, rel=1e-12)
    rep3 = asymptotic_ratios(COINCIDENT)
    assert rep3.case_tag == "Coincident"
    assert rep3.w0 == pytest.approx(1 - COINCIDENT.lam, rel=1e-12)
    # beta1 == beta2 but interior-tangent for all h: w0 solves the h=1 tangency
    beta_eq = ModelParams(r=0.05, rho=0.05, mu=0.1, sigma=0.25,
                          beta1=0.2, beta2=0.2, k=1.5, lam=0.5)
    rep4 = asymptotic_ratios(beta_eq)
    assert rep4.case_tag == "BetaEqual"
    from peakref import tangent_point
    assert rep4.w0 == pytest.approx(tangent_point(beta_eq, 1.0).w, rel=1e-12)


def test_merton_limit_small_lambda():
    p_small = ModelParams(r=0.05, rho=0.05, mu=0.1, sigma=0.25,
                          beta1=0.2, beta2=0.3, k=1.5, lam=1e-3)
    d = validate(p_small)
    rep = asymptotic_ratios(p_small)
    assert abs(rep.L1 - 0.04375) / 0.04375 < 0.01
    assert abs(rep.L2 - 1.0) < 0.01
    assert rep.merton_c == pytest.approx(0.04375, rel=1e-12)


def test_large_h_ratio_converges_to_L1(p0_stack):
    _, policy, _ = p0_stack
    rep = asymptotic_ratios(P0)
    errs = []
    for h in (1e2, 1e3, 1e4):
        xl = policy.wealth_boundaries(float(h)).x_lavs
        errs.append(abs(h / xl - rep.L1) / rep.L1)
    assert errs[-1] < 0.005
    assert errs[2] < errs[0]


def test_L_continuity_across_case_boundary():
    # beta2 < beta1: the coincident/separated switch sits at lam = 1 - beta1
    base = dict(r=0.05, rho=0.05, mu=0.1, sigma=0.25, beta1=0.3, beta2=0.15, k=1.5)
    lam_star = 1 - base["beta1"]
    eps = 1e-9
    lo = asymptotic_ratios(ModelParams(lam=lam_star - eps, **base))
    hi = asymptotic_ratios(ModelParams(lam=lam_star + eps, **base))
    assert lo.case_tag == "Beta2Less" and hi.case_tag == "Coincident"
    assert abs(lo.L1 - hi.L1) < 1e-6
    assert abs(lo.L2 - hi.L2) < 1e-6
    # no jumps along a lambda grid
    lams = np.linspace(0.05, 0.95, 46)
    L1s = [asymptotic_ratios(ModelParams(lam=float(l), **base)).L1 for l in lams]
    steps = np.abs(np.diff(L1s))
    assert np.max(steps) < 0.02 * max(L1s)


def test_long_run_fraction_candidates_p0(p0_stack):
    _, policy, _ = p0_stack
    fr = long_run_fractions(policy)
    # y3/y2 = 1 - lam exactly in the interior-tangent regime
    assert fr.limits["y3_over_y2"] == pytest.approx(1 - P0.lam, abs=1e-4)
    assert fr.frac_peak.proof == pytest.approx(P0.lam, abs=1e-4)
    assert fr.frac_peak.statement == pytest.approx(0.0, abs=1e-4)
    assert fr.frac_zero.proof == pytest.approx(0.0, abs=1e-4)
    assert fr.frac_zero.statement == pytest.approx(1.0, abs=1e-4)
    for c in (fr.frac_peak, fr.frac_zero):
        assert 0.0 <= c.statement <= 1.0 and 0.0 <= c.proof <= 1.0


def test_long_run_fraction_candidates_homog(homog_stack):
    _, policy, _ = homog_stack
    p = HOMOG
    fr = long_run_fractions(policy)
    y3_over_y1 = (1 - p.lam) ** p.beta1 / (
        (p.k / p.beta2) * p.lam**p.beta2 + (1 / p.beta1) * (1 - p.lam) ** p.beta1)
    assert fr.frac_zero.proof == pytest.approx(y3_over_y1, rel=1e-8)
    assert fr.frac_peak.proof == pytest.approx(1 - y3_over_y1, rel=1e-8)
    assert fr.frac_peak.statement == pytest.approx(1.0, abs=1e-10)


def test_tau_lavs_closed_form(p0_stack):
    dual, policy, _ = p0_stack
    h = 1.0
    bl = policy.wealth_boundaries(h)
    lv = dual.boundary_levels(h)
    # zero at the boundary itself
    assert expected_time_to_new_max(policy, bl.x_lavs, h) == pytest.approx(0.0, abs=1e-9)
    # spec example: f = 2*y3 gives (2/kappa^2) log 2 = 34.657...
    x2 = -dual.dual_dy(2 * lv.y3, h)
    tau = expected_time_to_new_max(policy, x2, h)
    assert tau == pytest.approx(2 / dual.kappa**2 * np.log(2.0), rel=1e-9)
    assert tau == pytest.approx(34.657, abs=1e-2)
    # strictly decreasing in x
    xs = np.linspace(bl.x_zero, bl.x_lavs * 0.999, 15)
    taus = [expected_time_to_new_max(policy, float(x), h) for x in xs]
    assert np.all(np.diff(taus) < 0)


def test_laplace_transform_derivative(p0_stack):
    _, policy, _ = p0_stack
    h = 1.0
    bl = policy.wealth_boundaries(h)
    x = 0.5 * (bl.x_zero + bl.x_lavs)
    closed = expected_time_to_new_max(policy, x, h)
    nu = 1e-7
    # -dE[e^(-nu tau)]/dnu at nu -> 0: one-sided difference quotients at nu
    # and nu/2, Richardson-extrapolated to kill the O(nu) term
    d1 = (1.0 - analytics.laplace_transform_new_max(policy, x, h, nu)) / nu
    d2 = (1.0 - analytics.laplace_transform_new_max(policy, x, h, nu / 2)) / (nu / 2)
    deriv = 2 * d2 - d1
    assert deriv == pytest.approx(closed, rel=1e-6)


def test_paper_family_pde_identity(p0_stack):
    _, policy, _ = p0_stack
    d = validate(P0)
    co = hitting_time_coefficients(policy, 1.0, family="paper")
    for y in np.geomspace(0.3, 30.0, 20):
        assert abs(analytics.paper_pde_residual(d.kappa, co.c_bar_1, co.c_bar_2, y)) < 1e-12
    # value condition along y1(h) on an h grid
    dual = policy.dual
    for h in (0.5, 1.0, 2.0):
        coh = hitting_time_coefficients(policy, h, family="paper")
        y1 = dual.boundary_levels(h).y1
        assert abs(coh.c_bar_1 * y1**2 + coh.c_bar_2 + np.log(y1) / d.kappa**2) < 1e-10


def test_tau_zero_homogeneous_exact(homog_stack):
    # constant barrier ratio: the drift-consistent family equals the
    # reflected-Brownian expected passage time in closed form
    dual, policy, _ = homog_stack
    p = HOMOG
    h = 1.0
    k2 = dual.kappa**2
    bl = policy.wealth_boundaries(h)
    lv = dual.boundary_levels(h)
    for frac in (0.2, 0.5, 0.9):
        x = bl.x_zero + frac * (bl.x_lavs - bl.x_zero)
        f = policy.dual_inverse(x, h)
        a = np.log(lv.y1 / lv.y3)
        s = np.log(f / lv.y3)
        rbm = 2 / k2 * (np.exp(a) - np.exp(s) - a + s)
        drift_val = expected_time_to_zero_consumption(policy, x, h, family="drift")
        assert drift_val == pytest.approx(rbm, rel=1e-8)
        # the paper family solves a different generator and disagrees here
        paper_val = expected_time_to_zero_consumption(policy, x, h, family="paper")
        assert paper_val > 0
        assert abs(paper_val - rbm) > 0.2 * rbm


def test_tau_zero_monotone_in_x(homog_stack):
    _, policy, _ = homog_stack
    h = 1.0
    bl = policy.wealth_boundaries(h)
    xs = np.linspace(bl.x_zero * 1.01, bl.x_lavs, 10)
    vals = [expected_time_to_zero_consumption(policy, float(x), h, family="drift")
            for x in xs]
    assert np.all(np.diff(vals) > 0)
    assert min(vals) >= 0
    # boundary value: zero at x_zero
    v0 = expected_time_to_zero_consumption(policy, bl.x_zero * (1 + 1e-10), h, family="drift")
    assert v0 == pytest.approx(0.0, abs=1e-5)


def test_tau_zero_unbounded_at_p0(p0_stack):
    # the zero-consumption barrier recedes as the peak grows; the closure
    # refuses to normalize instead of returning a finite number
    _, policy, _ = p0_stack
    h = 1.0
    bl = policy.wealth_boundaries(h)
    x = 0.5 * (bl.x_zero + bl.x_lavs)
    for family in ("paper", "drift"):
        with pytest.raises(NormalizationUnresolved):
            expected_time_to_zero_consumption(policy, x, h, family=family)
