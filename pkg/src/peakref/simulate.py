"""Monte Carlo engine: exact dual paths, primal Euler paths, estimators.

Randomness is organized in counter-based streams: paths are split into
fixed chunks of CHUNK_PATHS and chunk c draws from Philox keyed by
(seed, c), in fixed blocks of BLOCK_STEPS steps, so every estimator is
bit-reproducible regardless of scheduling and chunk results merge in a
fixed order.  With ``antithetic`` the odd path of each within-chunk pair
re-uses the even path's normals with flipped sign, and standard errors are
computed over pair averages.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import _kernels as K
from .errors import CIConflict, ConfigError, ConvergenceError, DomainError
from .policy import PolicySolver

CHUNK_PATHS = 4096
BLOCK_STEPS = 1024


@dataclass(frozen=True)
class PathConfig:
    dt: float
    horizon: float
    n_paths: int
    seed: int = 0
    antithetic: bool = False
    bridge_min: bool = False  # Brownian-bridge refinement of the dual running minimum

    def __post_init__(self):
        if not (self.dt > 0):
            raise ConfigError(f"need dt > 0, got {self.dt}")
        if not (self.horizon >= 100 * self.dt):
            raise ConfigError(f"need horizon >= 100*dt, got horizon={self.horizon}, dt={self.dt}")
        if not (self.n_paths >= 1):
            raise ConfigError(f"need n_paths >= 1, got {self.n_paths}")
        if self.antithetic and self.n_paths % 2:
            raise ConfigError("antithetic runs need an even n_paths")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class Estimate:
    mean: float
    std_error: float
    n_paths: int
    dt: float
    horizon: float
    seed: int

    def to_dict(self):
        return asdict(self)


@dataclass
class ValueEstimate(Estimate):
    tail_half_width: float = 0.0
    envelope_gap: float = 0.0       # |estimate using envelope utility - estimate|
    analytic: float | None = None

    def to_dict(self):
        return asdict(self)


@dataclass
class CalibrationResult:
    y_analytic: float
    y_mc: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    budget_at_analytic: float | None = None
    budget_se: float | None = None

    def to_dict(self):
        return asdict(self)


@dataclass
class HittingSample:
    tau_zero: np.ndarray          # hitting times, horizon where censored
    tau_zero_censored: np.ndarray  # bool
    tau_lavs: np.ndarray
    tau_lavs_censored: np.ndarray


@dataclass
class OccupancyResult:
    frac_zero: float
    frac_zero_se: float
    frac_peak: float
    frac_peak_se: float
    frac_interior: float
    hitting: HittingSample
    burn_in: float


def _mean_se(values: np.ndarray, antithetic: bool):
    """Mean and standard error; antithetic pairs are averaged first."""
    v = np.asarray(values, dtype=float)
    if antithetic:
        v = 0.5 * (v[0::2] + v[1::2])
    m = float(np.mean(v))
    if len(v) > 1:
        se = float(np.std(v, ddof=1) / np.sqrt(len(v)))
    else:
        se = float("inf")
    return m, se


class Simulator:
    def __init__(self, policy: PolicySolver):
        self.policy = policy
        self.dual = policy.dual
        self.params = policy.params
        d = self.dual
        p = self.params
        C = np.zeros(K.NCONST)
        C[K.R], C[K.MU], C[K.SIGMA], C[K.KAPPA] = p.r, p.mu, p.sigma, d.kappa
        C[K.B1], C[K.B2], C[K.KLOSS], C[K.LAM] = p.beta1, p.beta2, p.k, p.lam
        C[K.R1], C[K.R2], C[K.G1] = d.r1, d.r2, d.g1
        C[K.PCOEF], C[K.QCOEF], C[K.TWOROK] = d.P, d.Q, d.tworok
        C[K.K6], C[K.P6] = d.K6, d.p6
        C[K.HSTAR] = d.hstar if d.hstar is not None else -1.0
        C[K.CC0] = (1.0 / p.beta1) * (1 - p.lam) ** p.beta1 - (1 - p.lam) ** (p.beta1 - 1)
        C[K.CC1] = (p.k / p.beta2) * p.lam**p.beta2
        C[K.MR] = (p.mu - p.r) / p.sigma**2
        C[K.DEN] = p.r * (d.r1 - d.r2)
        C[K.CSTH] = (1 - p.lam) ** (-p.beta1 / (p.beta1 - 1.0))
        self._C = C

    # ------------------------------------------------------------------

    def _node_table(self, h_hi: float):
        self.dual._ensure_nodes(self.dual.h_min, h_hi)
        nodes, vals = self.dual._table
        return nodes, vals * self.dual._c6_scale

    def _chunks(self, n: int):
        out = []
        start = 0
        c = 0
        while start < n:
            stop = min(start + CHUNK_PATHS, n)
            out.append((c, start, stop))
            start = stop
            c += 1
        return out

    def _normals(self, seed: int, chunk_index: int, rows: int, cols_total: int,
                 block: int = BLOCK_STEPS):
        """Philox stream for one chunk; the block structure is fixed."""
        gen = np.random.Generator(np.random.Philox(
            key=[np.uint64(seed) & np.uint64(2**64 - 1), np.uint64(chunk_index)]))
        for c0 in range(0, cols_total, block):
            cols = min(block, cols_total - c0)
            yield c0, gen.standard_normal((rows, cols))

    def _normals_aggregated(self, seed: int, chunk_index: int, rows: int,
                            cols_coarse: int, m: int, block: int):
        """The same fine-step stream, summed in groups of m (common random numbers).

        Aggregating m fine N(0,1) increments and dividing by sqrt(m) yields
        the coarse-step increments of the *same* Brownian path that the fine
        run (with identical seed/chunk/block layout) consumes.
        """
        scale = 1.0 / np.sqrt(m)
        for c0f, zf in self._normals(seed, chunk_index, rows, cols_coarse * m, block):
            zc = zf.reshape(rows, -1, m).sum(axis=2) * scale
            yield c0f // m, zc

    # ------------------------------------------------------------------

    def _run_primal(self, x0: float, h0: float, cfg: PathConfig, burn_in: float = 0.0,
                    stop_mode: int = K.STOP_NONE, normals=None):
        if not (x0 >= 0) or not np.isfinite(x0):
            raise DomainError(f"need x0 >= 0, got {x0}")
        if not (h0 >= self.dual.h_min):
            raise DomainError(f"need h0 >= {self.dual.h_min}, got {h0}")
        pt0 = self.policy.feedback_controls(x0, h0)
        h_eff = pt0.h_effective
        n = cfg.n_paths
        nodes, node_c6 = self._node_table(max(1e6, 100.0 * h_eff))
        b0 = self.policy._scalar_bundle(h_eff)
        st = dict(
            x=np.full(n, float(x0)), h=np.full(n, float(h_eff)),
            w=np.full(n, float(b0["w"])), c6v=np.full(n, float(b0["c6"])),
            yw=np.full(n, float(pt0.f if np.isfinite(pt0.f) else 0.0)),
            lm=np.zeros(n), absorbed=np.zeros(n, np.uint8),
            t_abs=np.full(n, -1.0), done=np.zeros(n, np.uint8),
            val=np.zeros(n), val_env=np.zeros(n), budget=np.zeros(n),
            occ_zero=np.zeros(n), occ_peak=np.zeros(n),
            tau_z=np.full(n, -1.0), tau_l=np.full(n, -1.0),
        )
        if x0 == 0.0:
            st["absorbed"][:] = 1
            st["t_abs"][:] = 0.0
            st["val"][:] = pt0.value
            st["val_env"][:] = pt0.value
            st["tau_z"][:] = 0.0
            return st, h_eff
        nsteps = cfg.n_steps
        burn_t = burn_in * cfg.horizon
        p = self.params
        if normals is None:
            normals = lambda ci, rows: self._normals(cfg.seed, ci, rows, nsteps)
        for (ci, a, b) in self._chunks(n):
            rows = (b - a) // 2 if cfg.antithetic else (b - a)
            for c0, z in normals(ci, rows):
                t0 = c0 * cfg.dt
                disc = np.exp(-p.r * (t0 + cfg.dt * np.arange(z.shape[1])))
                K.primal_chunk(
                    z, disc, 1 if cfg.antithetic else 0, t0, cfg.dt, burn_t,
                    stop_mode, self._C, nodes, node_c6,
                    st["x"][a:b], st["h"][a:b], st["w"][a:b], st["c6v"][a:b],
                    st["yw"][a:b], st["lm"][a:b], st["absorbed"][a:b],
                    st["t_abs"][a:b], st["done"][a:b],
                    st["val"][a:b], st["val_env"][a:b], st["budget"][a:b],
                    st["occ_zero"][a:b], st["occ_peak"][a:b],
                    st["tau_z"][a:b], st["tau_l"][a:b])
        return st, h_eff

    def simulate_primal(self, x0: float, h0: float, cfg: PathConfig):
        """Euler simulation under the feedback controls; returns final states."""
        st, h_eff = self._run_primal(x0, h0, cfg)
        return st

    def estimate_value(self, x0: float, h0: float, cfg: PathConfig) -> ValueEstimate:
        """MC estimate of the realized discounted utility, with horizon tail bounds."""
        st, h_eff = self._run_primal(x0, h0, cfg)
        return self.value_from_state(st, x0, h0, cfg)

    def value_from_state(self, st, x0: float, h0: float, cfg: PathConfig) -> ValueEstimate:
        """Assemble the value estimate from an existing primal run.

        Surviving paths get the midpoint of the zero-consumption and at-peak
        perpetuity bounds beyond the horizon; the half-width is reported.
        """
        p = self.params
        disc_T = np.exp(-p.r * cfg.horizon)
        alive = st["absorbed"] == 0
        tail_lo = disc_T * (-p.k / (p.r * p.beta2)) * (p.lam * st["h"]) ** p.beta2
        tail_hi = disc_T * ((1 - p.lam) * st["h"]) ** p.beta1 / (p.r * p.beta1)
        val = st["val"] + np.where(alive, 0.5 * (tail_lo + tail_hi), 0.0)
        half = float(np.mean(np.where(alive, 0.5 * (tail_hi - tail_lo), 0.0)))
        mean, se = _mean_se(val, cfg.antithetic)
        val_env = st["val_env"] + np.where(alive, 0.5 * (tail_lo + tail_hi), 0.0)
        mean_env, _ = _mean_se(val_env, cfg.antithetic)
        analytic = self.policy.value_function(x0, h0)
        return ValueEstimate(mean=mean, std_error=se, n_paths=cfg.n_paths, dt=cfg.dt,
                             horizon=cfg.horizon, seed=cfg.seed,
                             tail_half_width=half, envelope_gap=abs(mean_env - mean),
                             analytic=analytic)

    def budget_from_primal(self, st, cfg: PathConfig):
        """E[int c* M dt] and E[X_T M_T] accumulated along the primal run."""
        m, se = _mean_se(st["budget"], cfg.antithetic)
        xm = st["x"] * np.exp(st["lm"])
        xm_m, xm_se = _mean_se(xm, cfg.antithetic)
        return (m, se), (xm_m, xm_se)

    # ------------------------------------------------------------------

    def _run_dual(self, y0: float, h0: float, cfg: PathConfig, burn_in: float = 0.0,
                  stop_mode: int = K.STOP_NONE, y_star: float | None = None):
        gm = self.dual.geometry(np.asarray([h0]))
        y3 = float(gm["y3"][0])
        if y0 < y3 * (1 - 1e-12):
            raise DomainError(f"need y0 >= y3(h0)={y3:.6g}, got {y0}")
        n = cfg.n_paths
        w0 = float(gm["w"][0])
        nodes, node_c6 = self._node_table(max(1e6, 100.0 * h0))
        st = dict(
            u=np.full(n, np.log(y0)), umin=np.full(n, np.log(y0)),
            h=np.full(n, float(h0)), w=np.full(n, w0), lm=np.zeros(n),
            done=np.zeros(n, np.uint8), budget=np.zeros(n),
            occ_zero=np.zeros(n), occ_peak=np.zeros(n),
            tau_z=np.full(n, -1.0), tau_l=np.full(n, -1.0),
        )
        nsteps = cfg.n_steps
        burn_t = burn_in * cfg.horizon
        ys = y_star if y_star is not None else y0
        dummy_uni = np.empty((1, 1))
        for (ci, a, b) in self._chunks(n):
            rows = (b - a) // 2 if cfg.antithetic else (b - a)
            gen_u = (np.random.Generator(np.random.Philox(
                key=[np.uint64(cfg.seed) ^ np.uint64(0x9E3779B97F4A7C15),
                     np.uint64(ci)])) if cfg.bridge_min else None)
            for c0, z in self._normals(cfg.seed, ci, rows, nsteps):
                t0 = c0 * cfg.dt
                disc = np.exp(-self.params.r * (t0 + cfg.dt * np.arange(z.shape[1])))
                uni = gen_u.random(z.shape) if cfg.bridge_min else dummy_uni
                K.dual_chunk(
                    z, disc, 1 if cfg.antithetic else 0, t0, cfg.dt, burn_t,
                    stop_mode, ys, self._C, nodes, node_c6,
                    st["u"][a:b], st["umin"][a:b], st["h"][a:b], st["w"][a:b],
                    st["lm"][a:b], st["done"][a:b], st["budget"][a:b],
                    st["occ_zero"][a:b], st["occ_peak"][a:b],
                    st["tau_z"][a:b], st["tau_l"][a:b],
                    1 if cfg.bridge_min else 0, uni)
        return st

    def simulate_dual(self, y0: float, h0: float, cfg: PathConfig):
        """Exact simulation of (Y, H-dagger); returns final states and accumulators."""
        return self._run_dual(y0, h0, cfg)

    def dual_budget(self, y0: float, h0: float, cfg: PathConfig):
        """MC estimate of E[int c-dagger(Y, H) M dt] starting the dual level at y0."""
        st = self._run_dual(y0, h0, cfg, y_star=y0)
        return _mean_se(st["budget"], cfg.antithetic)

    def calibrate_y_star(self, x: float, h: float, cfg: PathConfig,
                         verify: bool = False, n_grid: int = 5,
                         grid_halfwidth: float = 0.35) -> CalibrationResult:
        """Budget-constraint calibration of the initial dual level.

        The primary route is the analytic inverse f(x, h).  With
        ``verify=True`` the budget functional y -> E[int c M dt] is estimated
        on a log-spaced y-grid with common random numbers, the root of
        (budget - x) is interpolated, and a 3-SE confidence interval is
        produced; CIConflict is raised if the analytic value falls outside.
        """
        pt = self.policy.feedback_controls(x, h)
        y_an = pt.f
        if not verify:
            return CalibrationResult(y_analytic=y_an)
        h_eff = pt.h_effective
        ys = np.exp(np.linspace(np.log(y_an) - grid_halfwidth,
                                np.log(y_an) + grid_halfwidth, n_grid))
        means = np.empty(n_grid)
        ses = np.empty(n_grid)
        for i, y0 in enumerate(ys):
            m, se = self.dual_budget(float(y0), h_eff, cfg)
            means[i], ses[i] = m, se
        if not (np.all(np.diff(means) < 0)):
            raise ConvergenceError("budget functional not monotone on the y-grid; widen it")
        if not (means[0] >= x >= means[-1]):
            raise CIConflict(
                f"analytic y*={y_an:.6g} grid does not bracket the budget root: "
                f"E range [{means[-1]:.4g}, {means[0]:.4g}] vs x={x}")
        ly = np.log(ys)
        y_mc = float(np.exp(np.interp(-x, -means, ly)))
        slope = abs((means[-1] - means[0]) / (ly[-1] - ly[0]))
        se_root = float(np.interp(-x, -means, ses))
        half = 3.0 * se_root / slope
        ci_low = float(np.exp(np.log(y_mc) - half))
        ci_high = float(np.exp(np.log(y_mc) + half))
        i_an = int(np.argmin(np.abs(ly - np.log(y_an))))
        res = CalibrationResult(y_analytic=y_an, y_mc=y_mc,
                                ci_low=ci_low, ci_high=ci_high,
                                budget_at_analytic=float(means[i_an]),
                                budget_se=float(ses[i_an]))
        if not (ci_low <= y_an <= ci_high):
            raise CIConflict(
                f"analytic y*={y_an:.6g} outside MC confidence interval "
                f"[{ci_low:.6g}, {ci_high:.6g}]")
        return res

    # ------------------------------------------------------------------

    def occupancy_and_hitting(self, x0: float, h0: float, cfg: PathConfig,
                              burn_in: float = 0.0,
                              stop_mode: int = K.STOP_NONE) -> OccupancyResult:
        """Occupancy fractions over [burn_in*T, T] and censored hitting samples."""
        st, h_eff = self._run_primal(x0, h0, cfg, burn_in=burn_in, stop_mode=stop_mode)
        span = cfg.horizon * (1.0 - burn_in)
        # absorbed paths sit at x = 0 (inside the zero-consumption region) thereafter
        burn_t = burn_in * cfg.horizon
        dead = st["t_abs"] >= 0.0
        extra = np.where(dead, np.maximum(cfg.horizon - np.maximum(st["t_abs"], burn_t), 0.0), 0.0)
        fz = (st["occ_zero"] + extra) / span
        fp = st["occ_peak"] / span
        fz_m, fz_se = _mean_se(fz, cfg.antithetic)
        fp_m, fp_se = _mean_se(fp, cfg.antithetic)
        tz = st["tau_z"].copy()
        tz_c = tz < 0
        tz[tz_c] = cfg.horizon
        tl = st["tau_l"].copy()
        tl_c = tl < 0
        tl[tl_c] = cfg.horizon
        hit = HittingSample(tau_zero=tz, tau_zero_censored=tz_c,
                            tau_lavs=tl, tau_lavs_censored=tl_c)
        return OccupancyResult(frac_zero=fz_m, frac_zero_se=fz_se,
                               frac_peak=fp_m, frac_peak_se=fp_se,
                               frac_interior=max(0.0, 1.0 - fz_m - fp_m),
                               hitting=hit, burn_in=burn_in)

    def hitting_times_primal(self, x0: float, h0: float, cfg: PathConfig,
                             boundary: str, normals=None):
        """First-passage samples to one boundary with early path retirement."""
        mode = K.STOP_AT_ZERO if boundary == "zero" else K.STOP_AT_PEAK
        st, _ = self._run_primal(x0, h0, cfg, stop_mode=mode, normals=normals)
        tau = st["tau_z"] if boundary == "zero" else st["tau_l"]
        tau = tau.copy()
        cens = tau < 0
        tau[cens] = cfg.horizon
        return tau, cens

    def hitting_times_refined(self, x0: float, h0: float, boundary: str,
                              dt_coarse: float, dt_fine: float, horizon: float,
                              n_paths: int, seed: int):
        """Hitting-time means at two step sizes on shared Brownian paths.

        The fine run and the coarse run consume the same underlying
        increments (the coarse steps aggregate fine ones), so the
        sqrt(dt)-Richardson extrapolation subtracts strongly correlated
        estimates and its standard error stays at the fine-run level.
        Returns (mean_coarse, mean_fine, extrapolated, se_fine, censored_fine).
        """
        m = int(round(dt_coarse / dt_fine))
        if abs(m * dt_fine - dt_coarse) > 1e-12 * dt_coarse:
            raise ConfigError("dt_coarse must be an integer multiple of dt_fine")
        block = m * max(1, BLOCK_STEPS // m)
        cfg_f = PathConfig(dt=dt_fine, horizon=horizon, n_paths=n_paths, seed=seed)
        nsteps_f = cfg_f.n_steps
        fine_normals = lambda ci, rows: self._normals(seed, ci, rows, nsteps_f, block)
        tau_f, cens_f = self.hitting_times_primal(x0, h0, cfg_f, boundary,
                                                  normals=fine_normals)
        cfg_c = PathConfig(dt=dt_coarse, horizon=horizon, n_paths=n_paths, seed=seed)
        nsteps_c = cfg_c.n_steps
        coarse_normals = lambda ci, rows: self._normals_aggregated(
            seed, ci, rows, nsteps_c, m, block)
        tau_c, cens_c = self.hitting_times_primal(x0, h0, cfg_c, boundary,
                                                  normals=coarse_normals)
        s1, s2 = np.sqrt(dt_coarse), np.sqrt(dt_fine)
        mean_f = float(np.mean(tau_f))
        mean_c = float(np.mean(tau_c))
        extrap_paths = tau_f + (tau_f - tau_c) * s2 / (s1 - s2)
        extrap = float(np.mean(extrap_paths))
        se = float(np.std(extrap_paths, ddof=1) / np.sqrt(len(extrap_paths)))
        return mean_c, mean_f, extrap, se, float(np.mean(cens_f))
