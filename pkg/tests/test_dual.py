import threading

import numpy as np
import pytest

from peakref import DomainError, DualSolver, ModelParams, concave_envelope
from conftest import P0, HOMOG, BETA2_LESS

UPPER_RIGHT = ModelParams(r=0.05, rho=0.05, mu=0.1, sigma=0.25,
                          beta1=0.2, beta2=0.3, k=1.5, lam=0.92)


def test_boundary_levels_p0():
    d = DualSolver(P0)
    b = d.boundary_levels(1.0)
    assert b.y3 == pytest.approx(0.5**0.2, rel=1e-14)
    assert b.y3 == pytest.approx(0.87055, abs=5e-6)
    assert b.y2 == pytest.approx(0.5 ** (-0.8), rel=1e-14)
    assert b.y2 == pytest.approx(1.74110, abs=5e-6)
    # y1 = w^(beta1-1) in the interior-tangent subcase
    from peakref import tangent_point
    w = tangent_point(P0, 1.0).w
    assert b.y1 == pytest.approx(w ** (P0.beta1 - 1), rel=1e-11)
    assert b.y1 > b.y2 > b.y3
    assert b.y1 == pytest.approx(12.39, abs=5e-2)


def test_chord_regime_levels_coincide():
    d = DualSolver(HOMOG)
    for h in (0.2, 1.0, 5.0):
        b = d.boundary_levels(h)
        assert b.y1 == pytest.approx(b.y2, rel=1e-14)
        assert b.y2 > b.y3


def test_c3_formula_direct():
    d = DualSolver(P0)
    h = 1.0
    b = d.boundary_levels(h)
    r, r1, r2, g1 = P0.r, d.r1, d.r2, d.g1
    B = ((P0.k * r2 / P0.beta2) * (P0.lam * h) ** P0.beta2
         + (r1 * r2 / (g1 * (g1 - r1))) * b.y1**g1 + P0.lam * h * r1 * b.y1)
    expected = b.y1 ** (-r1) * B / (r * (r1 - r2))
    assert d.coefficients(h).c3 == pytest.approx(expected, rel=1e-13)


def test_c5prime_matches_finite_differences():
    # the analytic chain-rule derivative feeding the C6 integrand
    for params in (P0, HOMOG, BETA2_LESS, UPPER_RIGHT):
        d = DualSolver(params)
        for h in (0.4, 1.0, 2.7):
            cc = d.coefs_closed(np.asarray([h]))
            step = 1e-6 * h
            c5p_fd = ((d.coefs_closed(np.asarray([h + step]))["c5"][0]
                       - d.coefs_closed(np.asarray([h - step]))["c5"][0]) / (2 * step))
            assert cc["c5p"][0] == pytest.approx(c5p_fd, rel=1e-6)
            c3p_fd = ((d.coefs_closed(np.asarray([h + step]))["c3"][0]
                       - d.coefs_closed(np.asarray([h - step]))["c3"][0]) / (2 * step))
            assert cc["c3p"][0] == pytest.approx(c3p_fd, rel=1e-6)


def test_coefficient_positivity():
    for params in (P0, HOMOG, BETA2_LESS, UPPER_RIGHT):
        d = DualSolver(params)
        b = d.bundle(np.geomspace(0.1, 50.0, 40))
        for name in ("c2", "c3", "c5", "c6"):
            assert np.all(b[name] > 0), (params, name)


def test_c6_quadrature_accuracy_and_node_consistency():
    d = DualSolver(P0)
    for h in (0.13, 1.0, 3.33, 42.0):
        direct = d.c6_quad(h)
        via_nodes = float(d.c6(np.asarray([h]))[0])
        assert via_nodes == pytest.approx(direct, rel=1e-9)
    # refinement stability of the one-off quadrature
    a = d.c6_quad(1.0, epsrel=1e-12)
    b = d.c6_quad(1.0, epsrel=1e-9)
    assert a == pytest.approx(b, rel=1e-9)


def test_c6_derivative_sign_and_value():
    for params in (P0, HOMOG):
        d = DualSolver(params)
        hs = np.geomspace(0.2, 20.0, 15)
        b = d.bundle(hs)
        # C6' = -C5' * y3^(r1 - r2) < 0
        assert np.all(b["c6p"] < 0)
        for h in (0.5, 2.0):
            step = 1e-4 * h
            fd = (d.c6_quad(h + step) - d.c6_quad(h - step)) / (2 * step)
            c6p = float(d.bundle(np.asarray([h]))["c6p"][0])
            assert c6p == pytest.approx(fd, rel=1e-5)


def test_c6_large_h_order_bound():
    # |C6| <= K (h^(r1 b2 + r2) + h^(r1 b1 + r2)) with K fitted on [10, 100]
    d = DualSolver(P0)
    e1 = d.r1 * P0.beta2 + d.r2
    e2 = d.r1 * P0.beta1 + d.r2
    hs_fit = np.geomspace(10.0, 100.0, 8)
    c6f = d.c6(hs_fit)
    K = float(np.max(np.abs(c6f) / (hs_fit**e1 + hs_fit**e2)))
    h_big = 1e3
    c6b = float(d.c6(np.asarray([h_big]))[0])
    assert abs(c6b) <= 1.05 * K * (h_big**e1 + h_big**e2)
    # and C6 -> 0
    assert abs(float(d.c6(np.asarray([1e6]))[0])) < abs(float(d.c6(np.asarray([1.0]))[0])) * 1e-3


def test_ode_residual_grid():
    for params in (P0, HOMOG):
        d = DualSolver(params)
        worst = 0.0
        for h in np.linspace(0.3, 3.0, 8):
            b = d.boundary_levels(float(h))
            for y in np.geomspace(b.y3, 4 * b.y1, 25):
                worst = max(worst, abs(d.ode_residual(float(y), float(h))))
        assert worst < 1e-8


def test_smooth_fit_and_convexity():
    d = DualSolver(P0)
    for h in (0.5, 1.0, 2.0):
        b = d.boundary_levels(h)
        for yb in (b.y1, b.y2):
            v_lo = d.dual_value(yb * (1 - 1e-12), h)
            v_hi = d.dual_value(yb * (1 + 1e-12), h)
            assert v_hi == pytest.approx(v_lo, rel=1e-9)
            vy_lo = d.dual_dy(yb * (1 - 1e-12), h)
            vy_hi = d.dual_dy(yb * (1 + 1e-12), h)
            assert vy_hi == pytest.approx(vy_lo, rel=1e-9)
        for y in np.geomspace(b.y3, 5 * b.y1, 30):
            assert d.dual_dyy(float(y), h) > 0


def test_region_one_large_y_limit():
    d = DualSolver(P0)
    h = 1.0
    lim = -P0.k / (P0.r * P0.beta2) * (P0.lam * h) ** P0.beta2
    v = d.dual_value(1e9, h)
    assert v == pytest.approx(lim, rel=1e-9)


def test_running_conjugate_against_grid_search():
    d = DualSolver(P0)
    h = 1.0
    b = d.boundary_levels(h)
    cs = np.linspace(0.0, h, 10001)
    env = np.array([concave_envelope(P0, float(c), h) for c in cs])
    for q in np.geomspace(b.y3, 3 * b.y1, 12):
        oracle = float(np.max(env - cs * q))
        assert d.running_conjugate(float(q), h) == pytest.approx(oracle, abs=1e-6)
    # constant above y1; continuity at the kinks
    assert d.running_conjugate(2 * b.y1, h) == d.running_conjugate(3 * b.y1, h)
    for yb in (b.y1, b.y2):
        assert d.running_conjugate(yb * (1 - 1e-12), h) == pytest.approx(
            d.running_conjugate(yb * (1 + 1e-12), h), rel=1e-9)


def test_free_boundary_condition():
    for params in (P0, HOMOG):
        d = DualSolver(params)
        for h in (0.5, 1.0, 2.0):
            gm = d.geometry(np.asarray([h]))
            y3, y3p = float(gm["y3"][0]), float(gm["y3p"][0])
            step = 1e-5 * h
            phi = lambda hh: d.dual_value(
                (1 - params.lam) ** params.beta1 * hh ** (params.beta1 - 1), hh)
            dphi = (phi(h + step) - phi(h - step)) / (2 * step)
            vh = dphi - d.dual_dy(y3, h) * y3p
            scale = abs(d.dual_value(y3, h)) + abs(y3 * d.dual_dy(y3, h))
            assert abs(vh) < 1e-6 * scale


def test_marginal_wealth_monotone():
    d = DualSolver(P0)
    h = 1.0
    b = d.bundle(np.asarray([h]))
    ys = np.geomspace(float(b["y3"][0]), 5 * float(b["y1"][0]), 40)
    g = np.array([-d.dual_dy(float(y), h) for y in ys])
    assert np.all(np.diff(g) < 0)
    assert -d.dual_dy(float(b["y1"][0]), h) == pytest.approx(float(b["xz"][0]), rel=1e-10)
    assert -d.dual_dy(float(b["y3"][0]), h) == pytest.approx(float(b["xl"][0]), rel=1e-10)


def test_domain_error_below_y3():
    d = DualSolver(P0)
    b = d.boundary_levels(1.0)
    with pytest.raises(DomainError):
        d.dual_value(b.y3 * 0.99, 1.0)
    with pytest.raises(DomainError):
        d.running_conjugate(b.y3 * 0.9, 1.0)


def test_concurrent_reads():
    d = DualSolver(P0)
    errs = []

    def worker(hs):
        try:
            for h in hs:
                d.coefficients(float(h))
        except Exception as exc:  # pragma: no cover
            errs.append(exc)

    threads = [threading.Thread(target=worker, args=(np.linspace(0.2 + i * 0.1, 5.0, 12),))
               for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errs
