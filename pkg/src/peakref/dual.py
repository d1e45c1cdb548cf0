"""Closed-form dual solution of the linearized HJB ODE.

For each reference level h the dual value v(., h) solves

    kappa^2/2 * y^2 * v_yy - r*v = -V(y, h)

on y >= y3(h) with a three-piece closed form.  The coefficient functions
C2..C5 are algebraic in the boundary levels y1(h), y2(h); C6 is the
improper integral

    C6(h) = int_h^inf (1-lam)^((r1-r2)*beta1) * C5'(s) * s^((r1-r2)*(beta1-1)) ds,

which this module evaluates to ~1e-12 relative accuracy via adaptive
quadrature in t = log(s/h) (the integrand decays exponentially in t under
the validated root condition) plus an analytic power-law tail.  Values on a
monotone h-grid are cached once per solver; off-grid requests re-integrate
from the nearest cached node rather than interpolating.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from . import envelope
from .errors import DomainError, QuadratureError
from .model import DerivedConstants, ModelParams, validate


@dataclass(frozen=True)
class BoundaryLevels:
    y1: float  # marginal envelope value at c = 0
    y2: float  # marginal envelope value at c = h
    y3: float  # free-boundary level (new-peak boundary)
    h: float


@dataclass(frozen=True)
class DualCoefficients:
    c2: float
    c3: float
    c4: float
    c5: float
    c6: float
    h: float


class DualSolver:
    """Per-parameter-set evaluator of the piecewise dual solution.

    Thread-safe for concurrent reads; the lazily built C6 node table is
    extended under a lock and swapped atomically.
    """

    def __init__(self, params: ModelParams, derived: DerivedConstants | None = None,
                 h_min: float = 1e-6, nodes_per_decade: int = 64):
        self.params = params
        self.derived = derived if derived is not None else validate(params)
        d = self.derived
        p = params
        self.h_min = float(h_min)
        self.nodes_per_decade = int(nodes_per_decade)
        self.r, self.mu, self.sigma = p.r, p.mu, p.sigma
        self.b1, self.b2, self.k, self.lam = p.beta1, p.beta2, p.k, p.lam
        self.kappa, self.r1, self.r2, self.g1 = d.kappa, d.r1, d.r2, d.gamma1
        # particular-solution coefficients of the middle dual piece
        self.P = 2.0 / (self.kappa**2 * self.g1 * (self.g1 - self.r1) * (self.g1 - self.r2))
        self.Q = 2.0 / (self.kappa**2 * (self.g1 - self.r1) * (self.g1 - self.r2))
        self.tworok = 2.0 * self.r / self.kappa**2  # r1(r1-1) = r2(r2-1)
        self.K6 = (1 - self.lam) ** ((self.r1 - self.r2) * self.b1)
        self.p6 = (self.r1 - self.r2) * (self.b1 - 1.0)
        # integrand tail exponents; integrability is Assumption (A1)
        self.tail_p1 = self.r1 * (self.b1 - 1.0) + (self.b2 - self.b1)
        self.tail_p2 = self.r1 * (self.b1 - 1.0)
        if max(self.tail_p1, self.tail_p2) >= -1.0:
            raise QuadratureError(
                f"C6 tail exponents {self.tail_p1:.4f}, {self.tail_p2:.4f} "
                "not integrable; root condition violated")
        self.hstar = envelope.chord_switch_level(params)
        self._lock = threading.Lock()
        self._table = None      # (ascending h-grid, C6 at the nodes), swapped atomically
        self._gl8 = np.polynomial.legendre.leggauss(8)
        self._gl16 = np.polynomial.legendre.leggauss(16)
        # test hook: multiplies every C6 value (fault injection for verify)
        self._c6_scale = 1.0

    # ------------------------------------------------------------------
    # geometry: boundary levels and their h-derivatives
    # ------------------------------------------------------------------

    def w_of(self, h):
        return envelope.w_bisect(self.params, np.asarray(h, dtype=float))

    def geometry(self, h, w=None):
        """Vectorized y1, y2, y3 with derivatives, given (or solving) w(h)."""
        b1, b2, k, lam = self.b1, self.b2, self.k, self.lam
        h = np.asarray(h, dtype=float)
        if w is None:
            w = self.w_of(h)
        chord = envelope.chord_mask(self.params, h)
        z = lam * h + w
        y1 = k * (lam * h) ** b2 / (b2 * z) + w**b1 / (b1 * z)
        y2 = np.where(chord, y1, ((1 - lam) * h) ** (b1 - 1))
        y3 = (1 - lam) ** b1 * h ** (b1 - 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            wp_t = lam / (1 - b1) * (
                (w ** (b1 - 1) - k * (lam * h) ** (b2 - 1))
                / (w ** (b1 - 1) + lam * h * w ** (b1 - 2)))
        wp = np.where(chord, 1 - lam, wp_t)
        y1p_c = ((k / b2) * lam**b2 * (b2 - 1) * h ** (b2 - 2)
                 + (1 / b1) * (1 - lam) ** b1 * (b1 - 1) * h ** (b1 - 2))
        with np.errstate(invalid="ignore"):
            y1p_t = (b1 - 1) * w ** (b1 - 2) * wp
        y1p = np.where(chord, y1p_c, y1p_t)
        y2p = np.where(chord, y1p_c, (b1 - 1) * (1 - lam) ** (b1 - 1) * h ** (b1 - 2))
        y3p = (b1 - 1) * (1 - lam) ** b1 * h ** (b1 - 2)
        return dict(h=h, w=w, wp=wp, chord=chord, z=z,
                    y1=y1, y2=y2, y3=y3, y1p=y1p, y2p=y2p, y3p=y3p)

    def coefs_closed(self, h, w=None):
        """C3, C5 and their derivatives plus the C2/C4 offsets (closed forms)."""
        r, r1, r2, g1 = self.r, self.r1, self.r2, self.g1
        b1, b2, k, lam = self.b1, self.b2, self.k, self.lam
        gm = self.geometry(h, w)
        y1, y2 = gm["y1"], gm["y2"]
        y1p, y2p = gm["y1p"], gm["y2p"]
        h = gm["h"]
        den = r * (r1 - r2)
        B3 = (k * r2 / b2) * (lam * h) ** b2 + (r1 * r2 / (g1 * (g1 - r1))) * y1**g1 + lam * h * r1 * y1
        c3 = y1 ** (-r1) * B3 / den
        B5 = (r2 / b1) * ((1 - lam) * h) ** b1 - (r1 * r2 / (g1 * (g1 - r1))) * y2**g1 + (1 - lam) * h * r1 * y2
        c5 = c3 + y2 ** (-r1) * B5 / den
        B3p = (k * r2 * lam**b2 * h ** (b2 - 1)
               + (r1 * r2 / (g1 - r1)) * y1 ** (g1 - 1) * y1p
               + lam * r1 * (y1 + h * y1p))
        c3p = (-r1 * y1 ** (-r1 - 1) * y1p * B3 + y1 ** (-r1) * B3p) / den
        B5p = (r2 * (1 - lam) ** b1 * h ** (b1 - 1)
               - (r1 * r2 / (g1 - r1)) * y2 ** (g1 - 1) * y2p
               + (1 - lam) * r1 * (y2 + h * y2p))
        c5p = c3p + (-r1 * y2 ** (-r1 - 1) * y2p * B5 + y2 ** (-r1) * B5p) / den
        B4 = (r1 / b1) * ((1 - lam) * h) ** b1 - (r1 * r2 / (g1 * (g1 - r2))) * y2**g1 + (1 - lam) * h * r2 * y2
        d4 = y2 ** (-r2) * B4 / den
        B2 = (k * r1 / b2) * (lam * h) ** b2 + (r1 * r2 / (g1 * (g1 - r2))) * y1**g1 + lam * h * r2 * y1
        d2 = y1 ** (-r2) * B2 / den
        gm.update(c3=c3, c5=c5, c3p=c3p, c5p=c5p, d4=d4, d2=d2)
        return gm

    # ------------------------------------------------------------------
    # C6: improper integral, node cache, nearest-node re-integration
    # ------------------------------------------------------------------

    def c6_integrand(self, s, w=None):
        cc = self.coefs_closed(s, w)
        return self.K6 * cc["c5p"] * np.asarray(s, dtype=float) ** self.p6

    def c6_quad(self, h: float, epsrel: float = 1e-12) -> float:
        """One-off C6(h) by adaptive quadrature in t = log(s/h) plus analytic tail.

        The cutoff is pushed out by doubling until the integrand's local
        log-log slope is stable, then a fitted two-term power tail is added.
        """
        h = float(h)
        f_t = lambda t: float(self.c6_integrand(np.array([h * np.exp(t)]))[0]) * h * np.exp(t)
        t_cut = 38.0
        pts = None
        if self.hstar is not None and self.hstar > h:
            pts = [np.log(self.hstar / h)]
            pts = [p for p in pts if 0.0 < p < t_cut]
        while True:
            s_cut = h * np.exp(t_cut)
            sl1 = self._loglog_slope(s_cut)
            sl2 = self._loglog_slope(2 * s_cut)
            if not (np.isfinite(sl1) and np.isfinite(sl2)):
                break  # integrand already below floating-point range: tail negligible
            if abs(sl1 - sl2) < 1e-3 or t_cut > 250.0:
                break
            t_cut += np.log(4.0)
        val, _err = quad(f_t, 0.0, t_cut, epsabs=0.0, epsrel=epsrel, limit=500,
                         points=pts)
        val += self._tail_beyond(h * np.exp(t_cut))
        return val

    def _loglog_slope(self, s: float) -> float:
        f1 = float(self.c6_integrand(np.array([s]))[0])
        f2 = float(self.c6_integrand(np.array([s * 1.25]))[0])
        return np.log(abs(f2) / abs(f1)) / np.log(1.25)

    def _tail_beyond(self, s_cut: float) -> float:
        """Analytic integral of a two-term power fit a*s^p1 + b*s^p2 on [s_cut, inf)."""
        p1, p2 = self.tail_p1, self.tail_p2
        f1 = float(self.c6_integrand(np.array([s_cut]))[0])
        f2 = float(self.c6_integrand(np.array([2.0 * s_cut]))[0])
        if f1 == 0.0 or not np.isfinite(f1) or not np.isfinite(f2):
            return 0.0
        if p1 == p2:
            a, b = f1 / s_cut**p1, 0.0
        else:
            A = np.array([[s_cut**p1, s_cut**p2],
                          [(2 * s_cut) ** p1, (2 * s_cut) ** p2]])
            a, b = np.linalg.solve(A, [f1, f2])
        return (a * s_cut ** (p1 + 1) / (-(p1 + 1))
                + b * s_cut ** (p2 + 1) / (-(p2 + 1)))

    def _build_nodes(self, h_lo: float, h_hi: float):
        """Cumulative Gauss-Legendre sweep of C6 over a geometric h-grid."""
        n = int(np.ceil(np.log(h_hi / h_lo) * self.nodes_per_decade / np.log(10.0)))
        nodes = np.geomspace(h_lo, h_hi, max(n, 8) + 1)
        if self.hstar is not None and h_lo < self.hstar < h_hi:
            nodes = np.sort(np.unique(np.append(nodes, self.hstar)))
        xg, wg = self._gl16
        vals = np.empty(len(nodes))
        vals[-1] = self.c6_quad(float(nodes[-1]))
        a = nodes[:-1]
        b = nodes[1:]
        mid = 0.5 * (a + b)[:, None]
        half = 0.5 * (b - a)[:, None]
        s = (mid + half * xg[None, :]).ravel()
        f = self.c6_integrand(s).reshape(len(a), len(xg))
        panel = (half[:, 0]) * (f @ wg)
        vals[:-1] = vals[-1] + np.flip(np.cumsum(np.flip(panel)))
        return nodes, vals

    def _ensure_nodes(self, h_lo: float, h_hi: float):
        table = self._table
        if table is not None and table[0][0] <= h_lo and table[0][-1] >= h_hi:
            return table
        with self._lock:
            table = self._table
            nodes = None if table is None else table[0]
            lo = self.h_min if nodes is None else min(nodes[0], h_lo)
            hi = 1e4 if nodes is None else max(nodes[-1], h_hi)
            lo = min(lo, h_lo)
            hi = max(hi, h_hi)
            if nodes is None or lo < nodes[0] or hi > nodes[-1]:
                self._table = self._build_nodes(lo, hi)
            return self._table

    def c6(self, h, w=None):
        """C6 on an array of h via nearest cached node plus a local GL panel."""
        h = np.asarray(h, dtype=float)
        if np.any(h < self.h_min):
            raise DomainError(f"h below supported minimum {self.h_min}")
        nodes, node_c6 = self._ensure_nodes(float(np.min(h)), float(np.max(h)))
        j = np.searchsorted(nodes, h, side="left")
        j = np.minimum(j, len(nodes) - 1)
        hn = nodes[j]
        xg, wg = self._gl8
        mid = 0.5 * (h + hn)[:, None]
        half = 0.5 * (hn - h)[:, None]
        s = (mid + half * xg[None, :]).ravel()
        if w is not None:
            w_init = (np.asarray(w)[:, None] * (s.reshape(mid.shape[0], -1) / h[:, None])).ravel()
            ws = envelope.w_newton(self.params, s, w_init)
        else:
            ws = None
        f = self.c6_integrand(s, ws).reshape(len(h), len(xg))
        out = node_c6[j] + half[:, 0] * (f @ wg)
        return out * self._c6_scale

    # ------------------------------------------------------------------
    # public scalar API
    # ------------------------------------------------------------------

    def boundary_levels(self, h: float) -> BoundaryLevels:
        if not (h > 0) or not np.isfinite(h):
            raise DomainError(f"need h > 0, got h={h}")
        gm = self.geometry(np.asarray([h]))
        return BoundaryLevels(y1=float(gm["y1"][0]), y2=float(gm["y2"][0]),
                              y3=float(gm["y3"][0]), h=h)

    def coefficients(self, h: float) -> DualCoefficients:
        if not (h >= self.h_min):
            raise DomainError(f"need h >= {self.h_min}, got h={h}")
        b = self.bundle(np.asarray([h]))
        return DualCoefficients(c2=float(b["c2"][0]), c3=float(b["c3"][0]),
                                c4=float(b["c4"][0]), c5=float(b["c5"][0]),
                                c6=float(b["c6"][0]), h=h)

    def bundle(self, h, w=None):
        """All coefficients, boundary levels, derivatives, and wealth boundaries."""
        h = np.asarray(h, dtype=float)
        cc = self.coefs_closed(h, w)
        c6 = self.c6(h, cc["w"])
        c4 = c6 + cc["d4"]
        c2 = c4 + cc["d2"]
        c6p = -cc["c5p"] * cc["y3"] ** (self.r1 - self.r2)
        r, r1, r2, g1, lam = self.r, self.r1, self.r2, self.g1, self.lam
        y1, y2, y3 = cc["y1"], cc["y2"], cc["y3"]
        xz = -(y1 ** (r2 - 1)) * c2 * r2
        xa = (-cc["c3"] * r1 * y2 ** (r1 - 1) - c4 * r2 * y2 ** (r2 - 1)
              - self.Q * y2 ** (g1 - 1) + lam * h / r)
        xl = -cc["c5"] * r1 * y3 ** (r1 - 1) - c6 * r2 * y3 ** (r2 - 1) + h / r
        cc.update(c2=c2, c4=c4, c6=c6, c6p=c6p, xz=xz, xa=xa, xl=xl)
        return cc

    def _pieces(self, y: float, h: float):
        b = self.bundle(np.asarray([h]))
        return {k: (float(v[0]) if isinstance(v, np.ndarray) else v) for k, v in b.items()}

    def dual_value(self, y: float, h: float) -> float:
        b = self._pieces(y, h)
        self._check_domain(y, b)
        r, r1, r2, g1 = self.r, self.r1, self.r2, self.g1
        b1, b2, k, lam = self.b1, self.b2, self.k, self.lam
        if y > b["y1"]:
            return b["c2"] * y**r2 - k / (r * b2) * (lam * h) ** b2
        if y >= b["y2"]:
            return (b["c3"] * y**r1 + b["c4"] * y**r2 + self.P * y**g1 - lam * h * y / r)
        return (b["c5"] * y**r1 + b["c6"] * y**r2
                + ((1 - lam) * h) ** b1 / (r * b1) - h * y / r)

    def dual_dy(self, y: float, h: float) -> float:
        b = self._pieces(y, h)
        self._check_domain(y, b)
        r, r1, r2, g1 = self.r, self.r1, self.r2, self.g1
        if y > b["y1"]:
            return b["c2"] * r2 * y ** (r2 - 1)
        if y >= b["y2"]:
            return (b["c3"] * r1 * y ** (r1 - 1) + b["c4"] * r2 * y ** (r2 - 1)
                    + self.P * g1 * y ** (g1 - 1) - self.lam * h / r)
        return b["c5"] * r1 * y ** (r1 - 1) + b["c6"] * r2 * y ** (r2 - 1) - h / r

    def dual_dyy(self, y: float, h: float) -> float:
        b = self._pieces(y, h)
        self._check_domain(y, b)
        r1, r2, g1 = self.r1, self.r2, self.g1
        if y > b["y1"]:
            return self.tworok * b["c2"] * y ** (r2 - 2)
        if y >= b["y2"]:
            return (self.tworok * (b["c3"] * y ** (r1 - 2) + b["c4"] * y ** (r2 - 2))
                    + self.P * g1 * (g1 - 1) * y ** (g1 - 2))
        return self.tworok * (b["c5"] * y ** (r1 - 2) + b["c6"] * y ** (r2 - 2))

    @staticmethod
    def _check_domain(y: float, b: dict):
        if not np.isfinite(y) or y < b["y3"] * (1 - 1e-12):
            raise DomainError(f"need y >= y3={b['y3']:.6g}, got y={y}")

    def running_conjugate(self, q: float, h: float) -> float:
        """V(q, h) = sup_{0<=c<=h} [envelope(c,h) - c*q]."""
        gm = self.geometry(np.asarray([h]))
        y1, y2 = float(gm["y1"][0]), float(gm["y2"][0])
        y3 = float(gm["y3"][0])
        if not np.isfinite(q) or q < y3 * (1 - 1e-12):
            raise DomainError(f"need q >= y3={y3:.6g}, got q={q}")
        b1, b2, k, lam = self.b1, self.b2, self.k, self.lam
        if q > y1:
            return -k / b2 * (lam * h) ** b2
        if q >= y2:
            return (1 - b1) / b1 * q**self.g1 - lam * h * q
        return (1.0 / b1) * ((1 - lam) * h) ** b1 - h * q

    def ode_residual(self, y: float, h: float) -> float:
        """Relative residual of the dual ODE at (y, h)."""
        lhs = (self.kappa**2 / 2 * y**2 * self.dual_dyy(y, h)
               - self.r * self.dual_value(y, h) + self.running_conjugate(y, h))
        scale = (abs(self.r * self.dual_value(y, h))
                 + abs(self.running_conjugate(y, h)) + 1e-300)
        return lhs / scale
