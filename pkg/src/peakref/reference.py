"""Plain-numpy path stepping: trajectory recording and cross-checks.

This is the transparent counterpart of the compiled kernels.  It is used
for CSV trajectory dumps, for the coupled dual/primal consistency check
(same Brownian increments driving the exact dual process and the Euler
primal process), and as an independent implementation the kernels are
tested against at small scale.  Controls are evaluated through the
vectorized dual bundle rather than the scalar API so that modest path
counts stay cheap.
"""

from __future__ import annotations

import numpy as np

from .policy import PolicySolver

REGION_CODES = {"zero": 0, "interior": 1, "peak": 2}


def controls_vec(policy: PolicySolver, x: np.ndarray, h: np.ndarray, y_warm=None):
    """Vectorized feedback controls on the effective domain (x <= x_lavs(h)).

    Returns (c, pi, region_code, f).
    """
    d = policy.dual
    p = policy.params
    r, r1, r2, g1 = d.r, d.r1, d.r2, d.g1
    mr = (p.mu - p.r) / p.sigma**2
    b = d.bundle(np.asarray(h, dtype=float))
    n = len(x)
    f = np.full(n, np.nan)
    c = np.zeros(n)
    pi = np.zeros(n)
    reg = np.zeros(n, dtype=int)
    rI = x < b["xz"]
    rII = (~rI) & (x <= b["xa"])
    rIII = (~rI) & (~rII)
    if rI.any():
        f[rI] = (x[rI] / (-b["c2"][rI] * r2)) ** (1.0 / (r2 - 1.0))
        pi[rI] = mr * (1 - r2) * x[rI]
        reg[rI] = 0
    for mask, region2 in ((rII, True), (rIII, False)):
        if not mask.any():
            continue
        lo = np.where(region2, b["y2"][mask], b["y3"][mask])
        hi = np.where(region2, b["y1"][mask], np.minimum(b["y2"][mask], b["y1"][mask]))
        y = 0.5 * (lo + hi)
        if y_warm is not None:
            cand = np.clip(y_warm[mask], lo, hi)
            y = np.where(np.isfinite(cand), cand, y)
        a_, b_ = lo.copy(), hi.copy()
        for _ in range(80):
            if region2:
                g = (-b["c3"][mask] * r1 * y ** (r1 - 1) - b["c4"][mask] * r2 * y ** (r2 - 1)
                     - d.Q * y ** (g1 - 1) + p.lam * h[mask] / r)
                vyy = (d.tworok * (b["c3"][mask] * y ** (r1 - 2) + b["c4"][mask] * y ** (r2 - 2))
                       + d.P * g1 * (g1 - 1) * y ** (g1 - 2))
            else:
                g = (-b["c5"][mask] * r1 * y ** (r1 - 1) - b["c6"][mask] * r2 * y ** (r2 - 1)
                     + h[mask] / r)
                vyy = d.tworok * (b["c5"][mask] * y ** (r1 - 2) + b["c6"][mask] * y ** (r2 - 2))
            res = g - x[mask]
            a_ = np.where(res > 0, y, a_)
            b_ = np.where(res <= 0, y, b_)
            yn = y + res / vyy
            bad = ~((yn > a_) & (yn < b_) & np.isfinite(yn))
            yn = np.where(bad, 0.5 * (a_ + b_), yn)
            if np.all(np.abs(yn - y) <= 1e-12 * yn):
                y = yn
                break
            y = yn
        f[mask] = y
        if region2:
            c[mask] = p.lam * h[mask] + y ** (1.0 / (p.beta1 - 1.0))
            pi[mask] = mr * (d.tworok * (b["c3"][mask] * y ** (r1 - 1)
                                         + b["c4"][mask] * y ** (r2 - 1))
                             + d.P * g1 * (g1 - 1) * y ** (g1 - 1))
            reg[mask] = 1
        else:
            c[mask] = h[mask]
            pi[mask] = mr * d.tworok * (b["c5"][mask] * y ** (r1 - 1)
                                        + b["c6"][mask] * y ** (r2 - 1))
            reg[mask] = 2
    return c, pi, reg, f, b


def ratchet_vec(policy: PolicySolver, h: np.ndarray, x_target: np.ndarray):
    """Vectorized ratchet inverse: the h solving x_lavs(h) = x_target, h >= h0."""
    d = policy.dual
    r, r1, r2 = d.r, d.r1, d.r2
    hn = h.copy()
    for _ in range(40):
        b = d.bundle(hn)
        xl = b["xl"]
        y3, y3p = b["y3"], b["y3p"]
        e1 = y3 ** (r1 - 1)
        e2 = y3 ** (r2 - 1)
        xlp = (-b["c5p"] * r1 * e1 - b["c5"] * r1 * (r1 - 1) * e1 / y3 * y3p
               - b["c6p"] * r2 * e2 - b["c6"] * r2 * (r2 - 1) * e2 / y3 * y3p + 1.0 / r)
        step = (x_target - xl) / xlp
        if np.all(np.abs(step) <= 1e-12 * hn):
            break
        hn = np.maximum(hn + step, h * (1 + 1e-15))
    return hn


def primal_paths(policy: PolicySolver, x0: float, h0: float, dt: float,
                 n_steps: int, z: np.ndarray, record_stride: int = 0):
    """Euler paths under the feedback controls (vectorized reference route).

    Returns final state plus recorded trajectories (t, x, h, c, pi, region)
    when record_stride > 0.
    """
    p = policy.params
    n = z.shape[0]
    pt0 = policy.feedback_controls(x0, h0)
    x = np.full(n, float(min(x0, policy.wealth_boundaries(pt0.h_effective).x_lavs)))
    h = np.full(n, float(pt0.h_effective))
    absorbed = np.zeros(n, dtype=bool)
    sq = np.sqrt(dt)
    recs = {k: [] for k in ("t", "x", "h", "c", "pi", "region")}
    yw = None
    for s in range(n_steps):
        c, pi, reg, yw, b = controls_vec(policy, x, h, yw)
        c = np.where(absorbed, 0.0, c)
        pi = np.where(absorbed, 0.0, pi)
        if record_stride and s % record_stride == 0:
            recs["t"].append(s * dt)
            for key, arr in (("x", x), ("h", h), ("c", c), ("pi", pi), ("region", reg)):
                recs[key].append(arr.copy())
        xn = x + (p.r * x + pi * (p.mu - p.r) - c) * dt + pi * p.sigma * sq * z[:, s]
        xn = np.where(absorbed, 0.0, xn)
        hit = (~absorbed) & (xn <= 0)
        xn[hit] = 0.0
        absorbed |= hit
        over = (~absorbed) & (xn > b["xl"])
        if over.any():
            h[over] = ratchet_vec(policy, h[over], xn[over])
        x = xn
    out = {k: np.asarray(v) for k, v in recs.items()}
    out.update(x_final=x, h_final=h, absorbed=absorbed)
    return out


def coupled_gap(policy: PolicySolver, x0: float, h0: float, dt: float,
                n_steps: int, z: np.ndarray) -> float:
    """Mean over paths of sup_t |X_t - g(Y_t, H_t)|, same noise both sides.

    The dual side is exact; the primal side is Euler.  The gap is pure
    discretization error and shrinks like sqrt(dt).
    """
    d = policy.dual
    p = policy.params
    n = z.shape[0]
    y_star = policy.dual_inverse(x0, h0)
    u = np.full(n, np.log(y_star))
    umin = u.copy()
    cst = (1 - p.lam) ** (-p.beta1 / (p.beta1 - 1.0))
    x = np.full(n, float(x0))
    h = np.full(n, float(h0))
    absorbed = np.zeros(n, dtype=bool)
    sq = np.sqrt(dt)
    gap = np.zeros(n)
    yw = None
    r1, r2, g1, r = d.r1, d.r2, d.g1, d.r
    for s in range(n_steps):
        c, pi, reg, yw, b = controls_vec(policy, x, h, yw)
        c = np.where(absorbed, 0.0, c)
        pi = np.where(absorbed, 0.0, pi)
        # exact-dual implied wealth at the same time point
        hd = np.maximum(h0, cst * np.exp(umin / (p.beta1 - 1.0)))
        bd = d.bundle(hd)
        Y = np.maximum(np.exp(u), bd["y3"])
        xd = np.empty(n)
        mI = Y > bd["y1"]
        mII = (~mI) & (Y >= bd["y2"])
        mIII = (~mI) & (~mII)
        xd[mI] = -bd["c2"][mI] * r2 * Y[mI] ** (r2 - 1)
        xd[mII] = (-bd["c3"][mII] * r1 * Y[mII] ** (r1 - 1)
                   - bd["c4"][mII] * r2 * Y[mII] ** (r2 - 1)
                   - d.Q * Y[mII] ** (g1 - 1) + p.lam * hd[mII] / r)
        xd[mIII] = (-bd["c5"][mIII] * r1 * Y[mIII] ** (r1 - 1)
                    - bd["c6"][mIII] * r2 * Y[mIII] ** (r2 - 1) + hd[mIII] / r)
        gap = np.where(absorbed, gap, np.maximum(gap, np.abs(x - xd)))
        zz = z[:, s]
        xn = x + (p.r * x + pi * (p.mu - p.r) - c) * dt + pi * p.sigma * sq * zz
        hitz = (~absorbed) & (xn <= 0)
        xn[hitz] = 0.0
        absorbed |= hitz
        over = (~absorbed) & (xn > b["xl"])
        if over.any():
            h[over] = ratchet_vec(policy, h[over], xn[over])
        x = xn
        u = u - 0.5 * d.kappa**2 * dt - d.kappa * sq * zz
        umin = np.minimum(umin, u)
    return float(np.mean(gap))
