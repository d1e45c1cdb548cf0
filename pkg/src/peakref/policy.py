"""Inversion to primal variables: boundaries, dual variable f(x,h), controls.

The marginal-wealth map g(y,h) = -v_y(y,h) is strictly decreasing in y
(v is strictly convex), so f(.,h) = g(.,h)^{-1} is well defined on
(0, x_lavs(h)].  Wealth thresholds:

    x_zero(h) = g(y1(h),h)   below which consumption stops,
    x_aggr(h) = g(y2(h),h)   above which consumption sits at the peak h,
    x_lavs(h) = g(y3(h),h)   at which the peak is pushed up (singular control).

Points with x > x_lavs(h) jump immediately to the boundary by raising h to
the ratchet inverse h_tilde(x).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dual import DualSolver
from .errors import ConvergenceError, DomainError

REGION_ZERO = "ZeroConsumption"
REGION_INTERIOR = "Interior"
REGION_AT_PEAK = "AtPeak"
REGION_NEW_PEAK = "NewPeakBoundary"
REGION_ABOVE = "AboveBoundary"


@dataclass(frozen=True)
class WealthBoundaries:
    x_zero: float
    x_aggr: float
    x_lavs: float
    h: float


@dataclass(frozen=True)
class PolicyPoint:
    region: str
    f: float        # dual variable at (x, h)
    c_star: float   # consumption rate
    pi_star: float  # risky allocation (wealth units)
    value: float    # u~(x, h)
    h_effective: float  # h after the D3 jump, == h inside the effective domain


class PolicySolver:
    def __init__(self, dual: DualSolver):
        self.dual = dual
        self.params = dual.params
        self.derived = dual.derived

    # ------------------------------------------------------------------

    def wealth_boundaries(self, h: float) -> WealthBoundaries:
        if not (h > 0) or not np.isfinite(h):
            raise DomainError(f"need h > 0, got h={h}")
        b = self.dual.bundle(np.asarray([h]))
        return WealthBoundaries(x_zero=float(b["xz"][0]), x_aggr=float(b["xa"][0]),
                                x_lavs=float(b["xl"][0]), h=h)

    def boundary_table(self, h_grid) -> dict:
        b = self.dual.bundle(np.asarray(h_grid, dtype=float))
        sep = b["y1"] > b["y2"] * (1 + 1e-10)
        return dict(h=b["h"], x_zero=b["xz"], x_aggr=b["xa"], x_lavs=b["xl"],
                    separated=sep)

    # ------------------------------------------------------------------

    def _g(self, y, bund, region2: bool):
        d, r, r1, r2, g1 = self.dual, self.dual.r, self.dual.r1, self.dual.r2, self.dual.g1
        h = bund["h"]
        if region2:
            return (-bund["c3"] * r1 * y ** (r1 - 1) - bund["c4"] * r2 * y ** (r2 - 1)
                    - d.Q * y ** (g1 - 1) + d.lam * h / r)
        return -bund["c5"] * r1 * y ** (r1 - 1) - bund["c6"] * r2 * y ** (r2 - 1) + h / r

    def _g_deriv(self, y, bund, region2: bool):
        d, r1, r2, g1 = self.dual, self.dual.r1, self.dual.r2, self.dual.g1
        if region2:
            vyy = (d.tworok * (bund["c3"] * y ** (r1 - 2) + bund["c4"] * y ** (r2 - 2))
                   + d.P * g1 * (g1 - 1) * y ** (g1 - 2))
        else:
            vyy = d.tworok * (bund["c5"] * y ** (r1 - 2) + bund["c6"] * y ** (r2 - 2))
        return -vyy

    def _invert_monotone(self, x, bund, lo, hi, region2: bool):
        """Safeguarded Newton for g(y) = x on [lo, hi] (g strictly decreasing)."""
        y = 0.5 * (lo + hi)
        a, b = lo, hi
        for _ in range(200):
            res = self._g(y, bund, region2) - x
            if res > 0:
                a = y
            else:
                b = y
            step = res / self._g_deriv(y, bund, region2)
            yn = y - step
            if not (a < yn < b):
                yn = 0.5 * (a + b)
            if abs(yn - y) <= 1e-14 * yn:
                return yn
            y = yn
        if abs(self._g(y, bund, region2) - x) <= 1e-9 * max(1.0, x):
            return y
        raise ConvergenceError(f"dual inversion stalled at x={x}, h={bund['h']}")

    def _scalar_bundle(self, h: float) -> dict:
        b = self.dual.bundle(np.asarray([h], dtype=float))
        return {k: (float(v[0]) if isinstance(v, np.ndarray) else v) for k, v in b.items()}

    def dual_inverse(self, x: float, h: float) -> float:
        """f(x, h) on the effective domain 0 < x <= x_lavs(h)."""
        if not (h > 0):
            raise DomainError(f"need h > 0, got h={h}")
        b = self._scalar_bundle(h)
        return self._dual_inverse_b(x, b)

    def _dual_inverse_b(self, x: float, b: dict) -> float:
        r2 = self.dual.r2
        if not np.isfinite(x) or x <= 0:
            raise DomainError(f"need x > 0, got x={x}")
        if x > b["xl"] * (1 + 1e-12):
            raise DomainError(f"x={x} above x_lavs={b['xl']:.6g}; resolve the jump first")
        if x < b["xz"]:
            return (x / (-b["c2"] * r2)) ** (1.0 / (r2 - 1.0))
        if x <= b["xa"]:
            return self._invert_monotone(x, b, b["y2"], b["y1"], region2=True)
        return self._invert_monotone(x, b, b["y3"], min(b["y2"], b["y1"]), region2=False)

    # ------------------------------------------------------------------

    def ratchet_inverse(self, x: float) -> float:
        """h_tilde(x): the unique h with x_lavs(h) = x (x_lavs is increasing)."""
        if not (x > 0) or not np.isfinite(x):
            raise DomainError(f"need x > 0, got x={x}")
        # x_lavs(h) ~ h/L1-ish; bracket around r*x and expand
        h = max(self.dual.h_min * 2.0, self.params.r * x * 0.5)
        lo, hi = h, h
        xl = lambda hh: float(self.dual.bundle(np.asarray([hh]))["xl"][0])
        flo = xl(lo) - x
        for _ in range(200):
            if flo <= 0:
                break
            lo *= 0.5
            if lo < self.dual.h_min:
                lo = self.dual.h_min
                flo = xl(lo) - x
                if flo > 0:
                    raise DomainError(
                        f"x={x} below x_lavs({self.dual.h_min}) — h under supported minimum")
                break
            flo = xl(lo) - x
        fhi = xl(hi) - x
        for _ in range(200):
            if fhi >= 0:
                break
            hi *= 2.0
            fhi = xl(hi) - x
        else:
            raise ConvergenceError(f"ratchet inverse bracket failed for x={x}")
        for _ in range(200):
            mid = np.sqrt(lo * hi)
            fm = xl(mid) - x
            if fm < 0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-13 * hi:
                break
        h = 0.5 * (lo + hi)
        if abs(xl(h) - x) > 1e-9 * max(1.0, x):
            raise ConvergenceError(f"ratchet inverse did not meet tolerance at x={x}")
        return h

    # ------------------------------------------------------------------

    def feedback_controls(self, x: float, h: float) -> PolicyPoint:
        """Optimal consumption/investment and value at (x, h); resolves D3 jumps."""
        if not (x >= 0) or not np.isfinite(x):
            raise DomainError(f"need x >= 0, got x={x}")
        if not (h > 0) or not np.isfinite(h):
            raise DomainError(f"need h > 0, got h={h}")
        p, d = self.params, self.dual
        r, r1, r2, g1 = d.r, d.r1, d.r2, d.g1
        mr = (p.mu - p.r) / p.sigma**2
        b = self._scalar_bundle(h)
        jumped = False
        if x > b["xl"] * (1 + 1e-12):
            h = self.ratchet_inverse(x)
            b = self._scalar_bundle(h)
            jumped = True
        if x == 0.0:
            value = -p.k / (r * p.beta2) * (p.lam * h) ** p.beta2
            return PolicyPoint(region=REGION_ZERO, f=np.inf, c_star=0.0,
                               pi_star=0.0, value=value, h_effective=h)
        f = self._dual_inverse_b(min(x, b["xl"]), b)
        v = self._dual_value_b(f, b)
        value = v + x * f
        if x < b["xz"]:
            region = REGION_ZERO
            c = 0.0
            pi = mr * (1 - r2) * x
        elif x <= b["xa"]:
            region = REGION_INTERIOR
            c = p.lam * h + f ** (1.0 / (p.beta1 - 1.0))
            pi = mr * (d.tworok * (b["c3"] * f ** (r1 - 1) + b["c4"] * f ** (r2 - 1))
                       + d.P * g1 * (g1 - 1) * f ** (g1 - 1))
        elif x < b["xl"] * (1 - 1e-12):
            region = REGION_AT_PEAK
            c = h
            pi = mr * d.tworok * (b["c5"] * f ** (r1 - 1) + b["c6"] * f ** (r2 - 1))
        else:
            region = REGION_ABOVE if jumped else REGION_NEW_PEAK
            c = (1 - p.lam) ** (-p.beta1 / (p.beta1 - 1.0)) * b["y3"] ** (1.0 / (p.beta1 - 1.0))
            pi = mr * d.tworok * (b["c5"] * b["y3"] ** (r1 - 1) + b["c6"] * b["y3"] ** (r2 - 1))
        return PolicyPoint(region=region, f=f, c_star=c, pi_star=pi,
                           value=value, h_effective=h)

    def _dual_value_b(self, y: float, b: dict) -> float:
        d = self.dual
        r, r1, r2, g1 = d.r, d.r1, d.r2, d.g1
        b1, b2, k, lam = d.b1, d.b2, d.k, d.lam
        h = b["h"]
        if y > b["y1"]:
            return b["c2"] * y**r2 - k / (r * b2) * (lam * h) ** b2
        if y >= b["y2"]:
            return b["c3"] * y**r1 + b["c4"] * y**r2 + d.P * y**g1 - lam * h * y / r
        return (b["c5"] * y**r1 + b["c6"] * y**r2
                + ((1 - lam) * h) ** b1 / (r * b1) - h * y / r)

    def value_function(self, x: float, h: float) -> float:
        return self.feedback_controls(x, h).value

    # ------------------------------------------------------------------

    def policy_table(self, x_grid, h: float) -> dict:
        """Columns (x, h, region, f, c_star, pi_star, value) over an x-grid."""
        xs = np.asarray(x_grid, dtype=float)
        rows = dict(x=xs, h=np.full(xs.shape, h), region=[], f=np.empty_like(xs),
                    c_star=np.empty_like(xs), pi_star=np.empty_like(xs),
                    value=np.empty_like(xs))
        for i, x in enumerate(xs):
            pt = self.feedback_controls(float(x), h)
            rows["region"].append(pt.region)
            rows["f"][i] = pt.f
            rows["c_star"][i] = pt.c_star
            rows["pi_star"][i] = pt.pi_star
            rows["value"][i] = pt.value
        return rows
