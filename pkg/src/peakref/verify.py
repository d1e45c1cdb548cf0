"""Verification suite: every acceptance-style check with its tolerance.

``run_verification`` executes the checks against a parameter set and
returns an ordered report (one entry per check with tolerance, measured
value, and pass flag).  The CLI ``verify`` subcommand serializes the report
as deterministic JSON; determinism follows from the seeded counter-based
Monte Carlo streams and from keeping wall-clock and paths out of the
report.

``c6_perturbation`` is a fault-injection hook: it scales the cached C6
values so tests can confirm the smooth-fit/free-boundary checks actually
detect a corrupted coefficient pipeline.
"""

from __future__ import annotations

import numpy as np

from . import analytics
from .dual import DualSolver
from .errors import NormalizationUnresolved
from .model import ModelParams, validate
from .policy import PolicySolver
from .simulate import PathConfig, Simulator

P0 = ModelParams(r=0.05, rho=0.05, mu=0.1, sigma=0.25,
                 beta1=0.2, beta2=0.3, k=1.5, lam=0.5)

# Figure-regime parameter sets: boundary coincidence patterns
REGIME_SETS = {
    "separated": P0,
    "coincident_low_h": ModelParams(r=0.05, rho=0.05, mu=0.1, sigma=0.25,
                                    beta1=0.2, beta2=0.3, k=1.5, lam=0.92),
    "coincident_high_h": ModelParams(r=0.05, rho=0.05, mu=0.1, sigma=0.25,
                                     beta1=0.2, beta2=0.1, k=1.5, lam=0.973),
    "coincident_all": ModelParams(r=0.05, rho=0.05, mu=0.1, sigma=0.25,
                                  beta1=0.2, beta2=0.2, k=1.5, lam=0.95),
}

# homogeneous set (beta1 == beta2): boundary ratios independent of h, used
# for the long-run-fraction arbitration and the finite hitting-time check
HOMOG = REGIME_SETS["coincident_all"]


def classify_regime(params: ModelParams, h_lo=0.1, h_hi=10.0, n=200) -> str:
    dual = DualSolver(params)
    hs = np.linspace(h_lo, h_hi, n)
    gm = dual.geometry(hs)
    coincident = gm["chord"]
    if not coincident.any():
        return "separated"
    if coincident.all():
        return "coincident_all"
    if coincident[0]:
        return "coincident_low_h"
    return "coincident_high_h"


def _check(name, passed, tolerance, measured, detail=""):
    return dict(name=name, passed=bool(passed), tolerance=tolerance,
                measured=measured, detail=detail)


def run_verification(params: ModelParams = P0, seed: int = 20240801,
                     n_paths: int = 20000, dt: float = 1e-3, horizon: float = 200.0,
                     occupancy_paths: int = 1000, occupancy_horizon: float = 1000.0,
                     hitting_paths: int = 8000,
                     skip_mc: bool = False, fast: bool = False,
                     c6_perturbation: float = 1.0) -> dict:
    """Run the full verification suite and return the report dict.

    ``fast=True`` shrinks every Monte Carlo run to a smoke-test profile
    (useful for determinism checks and development); tolerances are kept,
    so individual MC checks may fail in that profile.
    """
    if fast:
        n_paths = min(n_paths, 512)
        dt = max(dt, 1e-2)
        horizon = min(horizon, 60.0)
        occupancy_paths = min(occupancy_paths, 64)
        occupancy_horizon = min(occupancy_horizon, 60.0)
        hitting_paths = min(hitting_paths, 64)
    profile = dict(
        tau_dts=(2e-2, 1e-2) if fast else (1e-2, 1e-3),
        tau_lavs_horizon=200.0 if fast else 600.0,
        tau_zero_horizon=600.0 if fast else 6000.0,
    )
    derived = validate(params)
    dual = DualSolver(params)
    dual._c6_scale = c6_perturbation
    policy = PolicySolver(dual)
    sim = Simulator(policy)
    checks = []

    # ------------------------------------------------- 1. boundary regimes
    expected = {name: name for name in REGIME_SETS}
    got = {name: classify_regime(p) for name, p in REGIME_SETS.items()}
    checks.append(_check(
        "regime_reproduction", got == expected, "exact classification",
        got, "four parameter sets vs their boundary-coincidence patterns"))

    # ------------------------------------- 2. dual ODE / smooth fit / convexity
    hs = np.linspace(0.25, 4.0, 20)
    max_res = 0.0
    max_jump_v = 0.0
    max_jump_vy = 0.0
    min_vyy = np.inf
    max_freeb = 0.0
    for h in hs:
        b = policy._scalar_bundle(float(h))
        ys = np.geomspace(b["y3"], 3.0 * b["y1"], 50)
        for y in ys:
            max_res = max(max_res, abs(dual.ode_residual(float(y), float(h))))
            min_vyy = min(min_vyy, dual.dual_dyy(float(y), float(h)))
        for yb in (b["y1"], b["y2"]):
            lo, hi = yb * (1 - 1e-13), yb * (1 + 1e-13)
            v_lo, v_hi = dual.dual_value(lo, h), dual.dual_value(hi, h)
            vy_lo, vy_hi = dual.dual_dy(lo, h), dual.dual_dy(hi, h)
            max_jump_v = max(max_jump_v, abs(v_hi - v_lo) / max(abs(v_lo), 1e-12))
            max_jump_vy = max(max_jump_vy, abs(vy_hi - vy_lo) / max(abs(vy_lo), 1e-12))
        # free boundary: v_h(y3(h), h) via chain-rule-corrected finite difference
        d_ = 1e-5 * h
        gm = dual.geometry(np.asarray([h]))
        y3, y3p = float(gm["y3"][0]), float(gm["y3p"][0])
        phi = lambda hh: dual.dual_value((1 - params.lam) ** params.beta1 * hh ** (params.beta1 - 1), hh)
        dphi = (phi(h + d_) - phi(h - d_)) / (2 * d_)
        vh = dphi - dual.dual_dy(y3, h) * y3p
        scale = abs(dual.dual_value(y3, h)) + abs(y3 * dual.dual_dy(y3, h))
        max_freeb = max(max_freeb, abs(vh) / scale)
    checks.append(_check("dual_ode_residual", max_res < 1e-8, 1e-8, max_res))
    checks.append(_check("dual_smooth_fit", max(max_jump_v, max_jump_vy) < 1e-9,
                         1e-9, max(max_jump_v, max_jump_vy)))
    checks.append(_check("dual_convexity", min_vyy > 0, "> 0", min_vyy))
    checks.append(_check("dual_free_boundary", max_freeb < 1e-6, 1e-6, max_freeb))

    # ------------------------------------------------- 3. duality round trip
    max_rt = 0.0
    max_marg = 0.0
    for h in np.linspace(0.25, 4.0, 20):
        b = policy._scalar_bundle(float(h))
        xs = np.linspace(0.02 * b["xl"], b["xl"], 100)
        for x in xs:
            f = policy._dual_inverse_b(float(x), b)
            g = -_vy_scalar(policy, f, b)
            max_rt = max(max_rt, abs(g - x) / max(1.0, x))
        for x in np.linspace(0.1 * b["xl"], 0.95 * b["xl"], 9):
            d_ = 1e-6 * max(1.0, x)
            fd = (policy.value_function(x + d_, h) - policy.value_function(x - d_, h)) / (2 * d_)
            f = policy._dual_inverse_b(float(x), b)
            max_marg = max(max_marg, abs(fd - f) / f)
    checks.append(_check("duality_round_trip", max_rt <= 1e-9, 1e-9, max_rt))
    checks.append(_check("marginal_value_identity", max_marg <= 1e-6, 1e-6, max_marg))

    # ------------------------------------------------- 9. structural properties
    jump_ok = True
    pi_ok = True
    uh_ok = True
    max_uh = -np.inf
    for h in np.linspace(0.25, 4.0, 20):
        b = policy._scalar_bundle(float(h))
        xs = np.linspace(1e-3 * b["xl"], b["xl"], 200)
        for x in xs:
            pt = policy.feedback_controls(float(x), float(h))
            if pt.c_star != 0.0 and pt.c_star <= params.lam * h:
                jump_ok = False
            if x > 0 and not (pt.pi_star > 0):
                pi_ok = False
        for x in np.linspace(0.05 * b["xl"], 0.9 * b["xl"], 6):
            d_ = 1e-5 * h
            uh = (policy.value_function(float(x), h + d_)
                  - policy.value_function(float(x), h - d_)) / (2 * d_)
            scale = abs(policy.value_function(float(x), h)) + 1.0
            max_uh = max(max_uh, uh / scale)
            if uh > 1e-8 * scale:
                uh_ok = False
    checks.append(_check("consumption_jump_property", jump_ok, "c*==0 or c*>lam*h", jump_ok))
    checks.append(_check("portfolio_positive", pi_ok, "> 0", pi_ok))
    checks.append(_check("value_monotone_in_h", uh_ok, 1e-8, max_uh))
    hom = _homogeneity_check()
    checks.append(_check("homogeneity_beta_equal", hom < 1e-8, 1e-8, hom))

    # ------------------------------------------------- 6. Merton limit
    p_small = ModelParams(r=params.r, rho=params.rho, mu=params.mu, sigma=params.sigma,
                          beta1=params.beta1, beta2=params.beta2, k=params.k, lam=1e-3)
    rep_small = analytics.asymptotic_ratios(p_small)
    e1 = abs(rep_small.L1 - derived.merton_c) / derived.merton_c
    e2 = abs(rep_small.L2 - derived.merton_pi) / derived.merton_pi
    checks.append(_check("merton_limit", e1 < 0.01 and e2 < 0.01, 0.01,
                         dict(L1_err=e1, L2_err=e2)))
    rep = analytics.asymptotic_ratios(params)
    bl = policy.wealth_boundaries(1e4)
    ratio = 1e4 / bl.x_lavs
    e3 = abs(ratio - rep.L1) / rep.L1
    checks.append(_check("large_h_consumption_ratio", e3 < 0.005, 0.005,
                         dict(ratio=ratio, L1=rep.L1, rel_err=e3)))

    # ------------------------------------------------- analytic hitting identities
    co = analytics.hitting_time_coefficients(policy, 1.0, family="paper")
    res_pde = max(abs(analytics.paper_pde_residual(derived.kappa, co.c_bar_1, co.c_bar_2, y))
                  for y in np.geomspace(0.5, 20.0, 25))
    checks.append(_check("hitting_pde_identity", res_pde < 1e-12, 1e-12, res_pde))
    b1v = policy._scalar_bundle(1.0)
    val_cond = abs(co.c_bar_1 * b1v["y1"] ** 2 + co.c_bar_2
                   + np.log(b1v["y1"]) / derived.kappa**2)
    checks.append(_check("hitting_value_condition", val_cond < 1e-10, 1e-10, val_cond))

    mc_section = {}
    if not skip_mc:
        mc_section = _mc_checks(params, policy, sim, checks, seed, n_paths, dt,
                                horizon, occupancy_paths, occupancy_horizon,
                                hitting_paths, profile)

    report = dict(
        schema_version=1,
        params=params.to_dict(),
        derived=derived.to_dict(),
        seed=seed,
        mc_config=dict(n_paths=n_paths, dt=dt, horizon=horizon,
                       occupancy_paths=occupancy_paths,
                       occupancy_horizon=occupancy_horizon,
                       hitting_paths=hitting_paths, skip_mc=skip_mc,
                       fast=fast, **profile),
        c6_perturbation=c6_perturbation,
        asymptotics=rep.to_dict(),
        long_run=analytics.long_run_fractions(policy).to_dict(),
        checks=checks,
        mc=mc_section,
        all_passed=all(c["passed"] for c in checks),
    )
    return report


def _vy_scalar(policy, y, b):
    d = policy.dual
    r, r1, r2, g1 = d.r, d.r1, d.r2, d.g1
    h = b["h"]
    if y > b["y1"]:
        return b["c2"] * r2 * y ** (r2 - 1)
    if y >= b["y2"]:
        return (b["c3"] * r1 * y ** (r1 - 1) + b["c4"] * r2 * y ** (r2 - 1)
                + d.P * g1 * y ** (g1 - 1) - d.lam * h / r)
    return b["c5"] * r1 * y ** (r1 - 1) + b["c6"] * r2 * y ** (r2 - 1) - h / r


def _homogeneity_check() -> float:
    dual = DualSolver(HOMOG)
    policy = PolicySolver(dual)
    worst = 0.0
    for h in (0.5, 2.0):
        xl = policy.wealth_boundaries(h).x_lavs
        for frac in (0.05, 0.3, 0.7, 0.99):
            x = frac * xl
            lhs = policy.value_function(x, h)
            rhs = h**HOMOG.beta1 * policy.value_function(x / h, 1.0)
            worst = max(worst, abs(lhs - rhs) / abs(rhs))
    return worst


def _mc_checks(params, policy, sim, checks, seed, n_paths, dt, horizon,
               occupancy_paths, occupancy_horizon, hitting_paths, profile):
    """Monte Carlo criteria: value, budget, hitting times, occupancy."""
    mc = {}
    x0, h0 = 2.0, 1.0

    # ---- 4. value + 5. budget from one primal run
    cfg = PathConfig(dt=dt, horizon=horizon, n_paths=n_paths, seed=seed, antithetic=True)
    st, _ = sim._run_primal(x0, h0, cfg)
    ve = sim.value_from_state(st, x0, h0, cfg)
    z = abs(ve.mean - ve.analytic) / ve.std_error
    rel_se = ve.std_error / abs(ve.analytic)
    checks.append(_check("mc_value", z <= 3.0 and rel_se < 0.02, "3 SE and SE/|u|<2%",
                         dict(mc=ve.mean, analytic=ve.analytic, se=ve.std_error,
                              z=z, rel_se=rel_se, tail_half=ve.tail_half_width)))
    checks.append(_check("mc_envelope_agreement", ve.envelope_gap <= ve.std_error,
                         "< 1 SE", dict(gap=ve.envelope_gap, se=ve.std_error)))
    (bm, bse), (xmm, xmse) = sim.budget_from_primal(st, cfg)
    rel_budget = abs(bm - x0) / x0
    zb = abs(bm - x0) / bse
    checks.append(_check("mc_budget", rel_budget < 0.02 or zb <= 3.0,
                         "2% within 3 SE",
                         dict(budget=bm, se=bse, rel=rel_budget, z=zb)))
    checks.append(_check("mc_supermartingale", xmm <= x0 + 3 * xmse, "<= x + 3 SE",
                         dict(XM=xmm, se=xmse)))
    mc["value"] = ve.to_dict()
    mc["budget"] = dict(mean=bm, se=bse)
    mc["supermartingale"] = dict(mean=xmm, se=xmse)

    # ---- 5b. calibration CI
    cal_cfg = PathConfig(dt=dt, horizon=horizon, n_paths=min(n_paths, 2000),
                         seed=seed + 1, antithetic=True)
    try:
        cal = sim.calibrate_y_star(x0, h0, cal_cfg, verify=True)
        ok = cal.ci_low <= cal.y_analytic <= cal.ci_high
        detail = cal.to_dict()
    except Exception as exc:  # CIConflict or ConvergenceError
        ok, detail = False, str(exc)
    checks.append(_check("mc_calibration_ci", ok, "y* inside 3-SE root CI", detail))
    mc["calibration"] = detail

    # ---- 7. hitting times: tau_lavs at three x points with dt refinement
    # (common random numbers across the two step sizes)
    dt_coarse, dt_fine = profile["tau_dts"]
    tl_detail = []
    tl_ok = True
    bl = policy.wealth_boundaries(h0)
    for frac in (0.35, 0.6, 0.85):
        x = bl.x_zero + frac * (bl.x_lavs - bl.x_zero)
        analytic = analytics.expected_time_to_new_max(policy, x, h0)
        mean_c, mean_f, extrap, se, cens = sim.hitting_times_refined(
            x, h0, "peak", dt_coarse, dt_fine, profile["tau_lavs_horizon"],
            hitting_paths, seed + 2)
        rel = abs(extrap - analytic) / analytic
        tl_detail.append(dict(x=x, analytic=analytic, mc_coarse=mean_c,
                              mc_fine=mean_f, extrapolated=extrap, se=se,
                              censored=cens, rel_err=rel))
        if rel > 0.05:
            tl_ok = False
    checks.append(_check("mc_tau_lavs", tl_ok, 0.05, tl_detail))
    mc["tau_lavs"] = tl_detail

    # ---- 7b. tau_zero: analytic closure vs MC (documented flag when unbounded)
    tz_detail = _tau_zero_check(params, policy, sim, seed, hitting_paths, profile)
    checks.append(_check("mc_tau_zero", tz_detail["passed"],
                         "10% or documented NormalizationUnresolved", tz_detail))
    mc["tau_zero"] = tz_detail

    # ---- 8. long-run occupancy arbitration (homogeneous set: ratios h-free)
    occ_detail = _occupancy_arbitration(seed, occupancy_paths, occupancy_horizon)
    checks.append(_check("mc_long_run_fractions", occ_detail["passed"], "3 SE",
                         occ_detail))
    mc["occupancy"] = occ_detail
    return mc


def _tau_zero_check(params, policy, sim, seed, hitting_paths, profile):
    """E[tau_zero]: try the paper closure, then the drift-consistent one.

    If neither stabilizes the expected time is unbounded for this parameter
    set; the check passes when that outcome is raised and documented, per
    the acceptance contract (silent disagreement is the failure mode).
    """
    h0 = 1.0
    bl = policy.wealth_boundaries(h0)
    x = 0.5 * (bl.x_zero + bl.x_lavs)
    out = dict(x=x, h=h0)
    analytic = None
    for family in ("paper", "drift"):
        try:
            val = analytics.expected_time_to_zero_consumption(policy, x, h0, family=family)
            out[f"analytic_{family}"] = val
            if family == "drift":
                analytic = val
        except NormalizationUnresolved as exc:
            out[f"analytic_{family}"] = f"NormalizationUnresolved: {exc}"
    if analytic is None:
        # unbounded expected time: flagged, not silently reported
        out["flag"] = "NormalizationUnresolved"
        out["passed"] = True
        out["note"] = ("expected time to zero consumption unbounded for this "
                       "parameter set; closure divergence raised and recorded")
        # cross-check the machinery on the homogeneous set where it is finite
        out["homogeneous_check"] = _tau_zero_homog(seed, hitting_paths, profile)
        out["passed"] = out["passed"] and out["homogeneous_check"]["passed"]
        return out
    cfgz = PathConfig(dt=1e-2, horizon=5 * profile["tau_zero_horizon"],
                      n_paths=min(hitting_paths, 1500), seed=seed + 3, antithetic=False)
    tau, cens = sim.hitting_times_primal(x, h0, cfgz, boundary="zero")
    censored = float(np.mean(cens))
    mc_mean = float(np.mean(tau))
    rel = abs(mc_mean - analytic) / analytic
    out.update(mc_mean=mc_mean, censored=censored, rel_err=rel)
    out["passed"] = bool(rel <= 0.10 and censored < 0.01)
    return out


def _tau_zero_homog(seed, hitting_paths, profile):
    """Finite-case validation of the zero-boundary hitting time machinery."""
    dual = DualSolver(HOMOG)
    policy = PolicySolver(dual)
    sim = Simulator(policy)
    h0 = 1.0
    bl = policy.wealth_boundaries(h0)
    x = 0.4 * bl.x_zero + 0.6 * bl.x_lavs
    det = dict(x=x)
    try:
        det["analytic_paper"] = analytics.expected_time_to_zero_consumption(
            policy, x, h0, family="paper")
    except NormalizationUnresolved as exc:
        det["analytic_paper"] = f"NormalizationUnresolved: {exc}"
    analytic = analytics.expected_time_to_zero_consumption(policy, x, h0, family="drift")
    dt_coarse, dt_fine = profile["tau_dts"]
    mean_c, mean_f, extrap, se, cens = sim.hitting_times_refined(
        x, h0, "zero", dt_coarse, dt_fine, profile["tau_zero_horizon"],
        min(hitting_paths, 1500), seed + 4)
    rel = abs(extrap - analytic) / analytic
    det.update(analytic_drift=analytic, mc_coarse=mean_c, mc_fine=mean_f,
               extrapolated=extrap, se=se, censored=cens, rel_err=rel)
    det["passed"] = bool(rel <= 0.10 and cens < 0.01)
    return det


def _occupancy_arbitration(seed, n_paths, horizon):
    """Occupancy fractions select the proof-version candidates within 3 SE.

    Run on the homogeneous set, where the boundary-level ratios do not
    depend on h, so the long-run limits are reachable at T = 10^3; a 20%
    burn-in removes the start-point transient.
    """
    dual = DualSolver(HOMOG)
    policy = PolicySolver(dual)
    sim = Simulator(policy)
    fr = analytics.long_run_fractions(policy)
    h0 = 1.0
    bl = policy.wealth_boundaries(h0)
    x0 = 0.5 * (bl.x_aggr + bl.x_lavs)
    cfg = PathConfig(dt=1e-2, horizon=horizon, n_paths=n_paths, seed=seed + 5,
                     antithetic=False)
    occ = sim.occupancy_and_hitting(x0, h0, cfg, burn_in=0.2)
    out = dict(mc_frac_zero=occ.frac_zero, mc_frac_zero_se=occ.frac_zero_se,
               mc_frac_peak=occ.frac_peak, mc_frac_peak_se=occ.frac_peak_se,
               candidates=dict(peak=dict(statement=fr.frac_peak.statement,
                                         proof=fr.frac_peak.proof),
                               zero=dict(statement=fr.frac_zero.statement,
                                         proof=fr.frac_zero.proof)),
               burn_in=0.2, start=dict(x=x0, h=h0))
    sel = {}
    ok = True
    for name, mcval, se, cand in (
            ("peak", occ.frac_peak, occ.frac_peak_se, fr.frac_peak),
            ("zero", occ.frac_zero, occ.frac_zero_se, fr.frac_zero)):
        within = {lab: abs(mcval - v) <= 3 * se
                  for lab, v in (("statement", cand.statement), ("proof", cand.proof))}
        n_within = sum(within.values())
        # candidates may coincide numerically; require the proof version in range
        if cand.statement == cand.proof:
            sel[name] = "both (identical)"
            ok = ok and within["proof"]
        else:
            sel[name] = ([lab for lab, w in within.items() if w] or ["none"])[0]
            ok = ok and (n_within == 1)
    out["selected"] = sel
    out["passed"] = bool(ok)
    return out
