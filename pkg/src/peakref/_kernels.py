"""Numba kernels for path simulation.

All functions are scalar-per-path and deterministic: path i consumes only
its own row of the pre-generated normal block, so results are independent
of thread scheduling.  Model constants travel in a flat float64 array laid
out per the index constants below; the C6 node table (geometric h-grid and
cached values) is passed alongside and off-node values are obtained by a
local Gauss-Legendre panel from the nearest node above.
"""

import math

import numpy as np
from numba import njit, prange

# constants-array layout
(R, MU, SIGMA, KAPPA, B1, B2, KLOSS, LAM, R1, R2, G1, PCOEF, QCOEF, TWOROK,
 K6, P6, HSTAR, CC0, CC1, MR, DEN, CSTH) = range(22)

NCONST = 22

# 4-point Gauss-Legendre abscissae/weights on [-1, 1]
_GLX = np.array([-0.8611363115940526, -0.3399810435848563,
                 0.3399810435848563, 0.8611363115940526])
_GLW = np.array([0.34785484513745385, 0.6521451548625461,
                 0.6521451548625461, 0.34785484513745385])


@njit(cache=True, inline="always")
def _chord(h, C):
    return C[CC0] + C[CC1] * h ** (C[B2] - C[B1]) <= 0.0


@njit(cache=True)
def _w_solve(h, w_init, C):
    """Tangency gap w(h); warm Newton with bisection safeguards."""
    b1 = C[B1]
    lam = C[LAM]
    cap = (1.0 - lam) * h
    if _chord(h, C):
        return cap
    w = w_init
    if not (w > 0.0 and w < cap and math.isfinite(w)):
        w = 0.5 * cap
    lo = 0.0
    hi = cap
    u2 = (C[KLOSS] / C[B2]) * (lam * h) ** C[B2]
    for _ in range(120):
        wb1m1 = w ** (b1 - 1.0)
        res = (1.0 - b1) / b1 * wb1m1 * w + u2 - lam * h * wb1m1
        if res < 0.0:
            lo = w
        else:
            hi = w
        grad = (1.0 - b1) * (wb1m1 + lam * h * wb1m1 / w)
        wn = w - res / grad
        if not (wn > lo and wn < hi and math.isfinite(wn)):
            wn = 0.5 * (lo + hi)
        if abs(wn - w) <= 1e-15 * wn:
            return wn
        w = wn
    return w


@njit(cache=True)
def _levels(h, w, C):
    """(y1, y2, y3) from (h, w)."""
    b1, b2, k, lam = C[B1], C[B2], C[KLOSS], C[LAM]
    z = lam * h + w
    y1 = k * (lam * h) ** b2 / (b2 * z) + w**b1 / (b1 * z)
    if _chord(h, C):
        y2 = y1
    else:
        y2 = ((1.0 - lam) * h) ** (b1 - 1.0)
    y3 = (1.0 - lam) ** b1 * h ** (b1 - 1.0)
    return y1, y2, y3


@njit(cache=True)
def _geom_full(h, w, C):
    """(y1, y2, y3, y1p, y2p, y3p) including h-derivatives."""
    b1, b2, k, lam = C[B1], C[B2], C[KLOSS], C[LAM]
    y1, y2, y3 = _levels(h, w, C)
    y3p = (b1 - 1.0) * (1.0 - lam) ** b1 * h ** (b1 - 2.0)
    if _chord(h, C):
        y1p = ((k / b2) * lam**b2 * (b2 - 1.0) * h ** (b2 - 2.0)
               + (1.0 / b1) * (1.0 - lam) ** b1 * (b1 - 1.0) * h ** (b1 - 2.0))
        y2p = y1p
    else:
        num = w ** (b1 - 1.0) - k * (lam * h) ** (b2 - 1.0)
        den = w ** (b1 - 1.0) + lam * h * w ** (b1 - 2.0)
        wp = lam / (1.0 - b1) * num / den
        y1p = (b1 - 1.0) * w ** (b1 - 2.0) * wp
        y2p = (b1 - 1.0) * (1.0 - lam) ** (b1 - 1.0) * h ** (b1 - 2.0)
    return y1, y2, y3, y1p, y2p, y3p


@njit(cache=True)
def _coefs(h, w, C):
    """(c3, c5, c3p, c5p, d4, d2, y1, y2, y3, y3p) closed forms at (h, w)."""
    r, r1, r2, g1 = C[R], C[R1], C[R2], C[G1]
    b1, b2, k, lam = C[B1], C[B2], C[KLOSS], C[LAM]
    den = C[DEN]
    y1, y2, y3, y1p, y2p, y3p = _geom_full(h, w, C)
    lhb2 = (lam * h) ** b2
    olh = ((1.0 - lam) * h) ** b1
    B3 = (k * r2 / b2) * lhb2 + (r1 * r2 / (g1 * (g1 - r1))) * y1**g1 + lam * h * r1 * y1
    c3 = y1 ** (-r1) * B3 / den
    B5 = (r2 / b1) * olh - (r1 * r2 / (g1 * (g1 - r1))) * y2**g1 + (1.0 - lam) * h * r1 * y2
    c5 = c3 + y2 ** (-r1) * B5 / den
    B3p = (k * r2 * lam**b2 * h ** (b2 - 1.0)
           + (r1 * r2 / (g1 - r1)) * y1 ** (g1 - 1.0) * y1p
           + lam * r1 * (y1 + h * y1p))
    c3p = (-r1 * y1 ** (-r1 - 1.0) * y1p * B3 + y1 ** (-r1) * B3p) / den
    B5p = (r2 * (1.0 - lam) ** b1 * h ** (b1 - 1.0)
           - (r1 * r2 / (g1 - r1)) * y2 ** (g1 - 1.0) * y2p
           + (1.0 - lam) * r1 * (y2 + h * y2p))
    c5p = c3p + (-r1 * y2 ** (-r1 - 1.0) * y2p * B5 + y2 ** (-r1) * B5p) / den
    B4 = (r1 / b1) * olh - (r1 * r2 / (g1 * (g1 - r2))) * y2**g1 + (1.0 - lam) * h * r2 * y2
    d4 = y2 ** (-r2) * B4 / den
    B2c = (k * r1 / b2) * lhb2 + (r1 * r2 / (g1 * (g1 - r2))) * y1**g1 + lam * h * r2 * y1
    d2 = y1 ** (-r2) * B2c / den
    return c3, c5, c3p, c5p, d4, d2, y1, y2, y3, y3p


@njit(cache=True)
def _c6_integrand(s, w_hint, C):
    w = _w_solve(s, w_hint, C)
    res = _coefs(s, w, C)
    c5p = res[3]
    return C[K6] * c5p * s ** C[P6], w


@njit(cache=True)
def _c6_panel(a, b, w_hint, C):
    """Gauss-Legendre-4 integral of the C6 integrand over [a, b].

    The panel never straddles the subcase switch: callers split at HSTAR.
    """
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    total = 0.0
    w = w_hint
    for i in range(4):
        s = mid + half * _GLX[i]
        f, w = _c6_integrand(s, w * s / a if a > 0 else w, C)
        total += _GLW[i] * f
    return half * total


@njit(cache=True)
def _c6_panel_split(a, b, w_hint, C):
    hstar = C[HSTAR]
    if hstar > 0.0 and a < hstar < b:
        return _c6_panel(a, hstar, w_hint, C) + _c6_panel(hstar, b, w_hint * hstar / a, C)
    return _c6_panel(a, b, w_hint, C)


@njit(cache=True)
def _c6_at(h, w, nodes, node_c6, C):
    """C6(h) anchored at the nearest node at or above h."""
    n = nodes.shape[0]
    if h >= nodes[n - 1]:
        # beyond the cached grid (astronomical peaks): asymptotic power decay
        expo = C[R1] * C[B1] + C[R2]
        return node_c6[n - 1] * (h / nodes[n - 1]) ** expo
    j = np.searchsorted(nodes, h)
    anchor = nodes[j]
    if anchor == h:
        return node_c6[j]
    return node_c6[j] + _c6_panel_split(h, anchor, w, C)


@njit(cache=True)
def _c6_step(h0, w0, c6_0, h1, C):
    """C6(h1) from C6(h0) by integrating the short panel [h0, h1] (h1 > h0).

    Used for the small ratchet increments; panels never straddle the subcase
    switch because the split helper cuts at HSTAR.
    """
    return c6_0 - _c6_panel_split(h0, h1, w0, C)


@njit(cache=True)
def _xl_xlp(h, w, c6, C):
    """x_lavs(h) and its h-derivative from closed forms plus cached C6."""
    r, r1, r2 = C[R], C[R1], C[R2]
    c3, c5, c3p, c5p, d4, d2, y1, y2, y3, y3p = _coefs(h, w, C)
    c6p = -c5p * y3 ** (r1 - r2)
    e1 = y3 ** (r1 - 1.0)
    e2 = y3 ** (r2 - 1.0)
    xl = -c5 * r1 * e1 - c6 * r2 * e2 + h / r
    xlp = (-c5p * r1 * e1 - c5 * r1 * (r1 - 1.0) * e1 / y3 * y3p
           - c6p * r2 * e2 - c6 * r2 * (r2 - 1.0) * e2 / y3 * y3p + 1.0 / r)
    return xl, xlp


@njit(cache=True)
def _ratchet(h0, w0, c60, x_target, nodes, node_c6, C):
    """Solve x_lavs(h) = x_target for h >= h0 (Newton with incremental C6)."""
    h = h0
    w = w0
    c6 = c60
    for _ in range(30):
        xl, xlp = _xl_xlp(h, w, c6, C)
        step = (x_target - xl) / xlp
        if abs(step) <= 1e-12 * h:
            break
        hn = h + step
        if hn <= h0:
            hn = 0.5 * (h + h0) if h > h0 else h0 * (1.0 + 1e-12)
        w = _w_solve(hn, w * hn / h, C)
        if abs(hn - h0) <= 0.02 * h0:
            c6 = _c6_step(h0, w0, c60, hn, C)
        else:
            c6 = _c6_at(hn, w, nodes, node_c6, C)
        h = hn
    return h, w, c6


@njit(cache=True, fastmath=True)
def _f_newton(x, region2, c3, c4, c5, c6, lo, hi, h, y0, C):
    """Solve g(y, h) = x for y in [lo, hi]; g strictly decreasing."""
    r, r1, r2, g1 = C[R], C[R1], C[R2], C[G1]
    lam = C[LAM]
    P, Q, tworok = C[PCOEF], C[QCOEF], C[TWOROK]
    y = y0
    if not (y > lo and y < hi):
        y = 0.5 * (lo + hi)
    a = lo
    b = hi
    for _ in range(80):
        ly = math.log(y)
        e1 = math.exp((r1 - 1.0) * ly)
        e2 = math.exp((r2 - 1.0) * ly)
        if region2:
            e3 = math.exp((g1 - 1.0) * ly)
            g = -c3 * r1 * e1 - c4 * r2 * e2 - Q * e3 + lam * h / r
            vyy = tworok * (c3 * e1 + c4 * e2) / y + P * g1 * (g1 - 1.0) * e3 / y
        else:
            g = -c5 * r1 * e1 - c6 * r2 * e2 + h / r
            vyy = tworok * (c5 * e1 + c6 * e2) / y
        res = g - x
        if res > 0.0:
            a = y
        else:
            b = y
        yn = y + res / vyy  # dg/dy = -vyy
        if not (yn > a and yn < b and math.isfinite(yn)):
            yn = 0.5 * (a + b)
        # Newton lands quadratically: a step this small leaves yn at ~1e-12
        # relative, well inside the 1e-9 round-trip budget.
        if abs(yn - y) <= 1e-6 * yn:
            return yn
        y = yn
    return y


@njit(cache=True)
def _bundle(h, w, c6, C):
    """(c2, c3, c4, c5, y1, y2, y3, xz, xa, xl) from (h, w, C6)."""
    r, r1, r2, g1 = C[R], C[R1], C[R2], C[G1]
    lam, Q = C[LAM], C[QCOEF]
    c3, c5, c3p, c5p, d4, d2, y1, y2, y3, y3p = _coefs(h, w, C)
    c4 = c6 + d4
    c2 = c4 + d2
    xz = -(y1 ** (r2 - 1.0)) * c2 * r2
    xa = (-c3 * r1 * y2 ** (r1 - 1.0) - c4 * r2 * y2 ** (r2 - 1.0)
          - Q * y2 ** (g1 - 1.0) + lam * h / r)
    xl = -c5 * r1 * y3 ** (r1 - 1.0) - c6 * r2 * y3 ** (r2 - 1.0) + h / r
    return c2, c3, c4, c5, y1, y2, y3, xz, xa, xl


STOP_NONE = 0
STOP_AT_ZERO = 1
STOP_AT_PEAK = 2


@njit(cache=True, parallel=True, fastmath=True)
def primal_chunk(z, disc, anti, t0, dt, burn_t, stop_mode, C, nodes, node_c6,
                 x, h, w, c6v, yw, lm, absorbed, t_abs, done,
                 val, val_env, budget, occ_zero, occ_peak, tau_z, tau_l):
    """Advance a chunk of primal Euler paths through one block of steps.

    z has one row per base path; with anti != 0 path p uses row p//2 and
    sign (-1)^p.  disc[s] = exp(-r*(t0 + s*dt)).  State and accumulator
    arrays are chunk-local slices.  Hitting/occupancy tests use the state at
    the start of each step.  Absorbed paths get their exact zero-consumption
    continuation value at absorption and are retired.
    """
    npaths = x.shape[0]
    nsteps = z.shape[1]
    r, mu, sigma = C[R], C[MU], C[SIGMA]
    kap, b1, b2, k, lam = C[KAPPA], C[B1], C[B2], C[KLOSS], C[LAM]
    r1, r2, g1 = C[R1], C[R2], C[G1]
    mr = C[MR]
    tworok, P = C[TWOROK], C[PCOEF]
    sq = math.sqrt(dt)
    mlog_step = -(r + 0.5 * kap * kap) * dt
    edr = math.exp(-r * dt)
    pwc = 1.0 / (b1 - 1.0)
    for p in prange(npaths):
        if done[p] != 0:
            continue
        xv = x[p]
        hv = h[p]
        wv = w[p]
        c6s = c6v[p]
        yv = yw[p]
        lmv = lm[p]
        dn = False
        ab = False
        c2, c3, c4, c5, y1, y2, y3, xz, xa, xl = _bundle(hv, wv, c6s, C)
        uI = -k * (lam * hv) ** b2 / b2
        uIII = ((1.0 - lam) * hv) ** b1 / b1
        vacc = 0.0
        veacc = 0.0
        bacc = 0.0
        ozacc = 0.0
        opacc = 0.0
        for s in range(nsteps):
            t = t0 + s * dt
            if anti != 0:
                zz = z[p // 2, s] * (1.0 - 2.0 * (p & 1))
            else:
                zz = z[p, s]
            # --- hitting bookkeeping on the pre-step state ---
            if xv <= xz:
                if tau_z[p] < 0.0:
                    tau_z[p] = t
                if stop_mode == STOP_AT_ZERO:
                    dn = True
                    break
            if xv >= xl * (1.0 - 1e-12):
                if tau_l[p] < 0.0:
                    tau_l[p] = t
                if stop_mode == STOP_AT_PEAK:
                    dn = True
                    break
            # --- occupancy ---
            if t >= burn_t:
                if xv < xz:
                    ozacc += dt
                elif xv > xa and xv <= xl:
                    opacc += dt
            # --- feedback controls ---
            ds = disc[s]
            vyy = 0.0
            if xv < xz:
                cc = 0.0
                pi = mr * (1.0 - r2) * xv
                yv = y1  # warm start for the crossing into the interior region
                vacc += ds * uI * dt
                veacc += ds * uI * dt
            else:
                if xv <= xa:
                    yv = _f_newton(xv, True, c3, c4, c5, c6s, y2, y1, hv, yv, C)
                    ly = math.log(yv)
                    e1 = math.exp((r1 - 1.0) * ly)
                    e2 = math.exp((r2 - 1.0) * ly)
                    e3 = math.exp((g1 - 1.0) * ly)
                    cc = lam * hv + math.exp(pwc * ly)
                    vyy = tworok * (c3 * e1 + c4 * e2) / yv + P * g1 * (g1 - 1.0) * e3 / yv
                    pi = mr * yv * vyy
                    rel = cc - lam * hv
                    u = rel**b1 / b1
                    # envelope value: chord piece applies below z = lam*h + w
                    if cc < lam * hv + wv:
                        ue = uI + y1 * cc
                    else:
                        ue = u
                else:
                    hi_br = y2 if y2 < y1 else y1
                    yv = _f_newton(xv, False, c3, c4, c5, c6s, y3, hi_br, hv, yv, C)
                    ly = math.log(yv)
                    e1 = math.exp((r1 - 1.0) * ly)
                    e2 = math.exp((r2 - 1.0) * ly)
                    cc = hv
                    vyy = tworok * (c5 * e1 + c6s * e2) / yv
                    pi = mr * yv * vyy
                    u = uIII
                    ue = u
                vacc += ds * u * dt
                veacc += ds * ue * dt
                bacc += cc * math.exp(lmv) * dt
            # --- Euler step ---
            xn = xv + (r * xv + pi * (mu - r) - cc) * dt + pi * sigma * sq * zz
            lmv += mlog_step - kap * sq * zz
            if vyy > 0.0:
                # first-order warm prediction of the next dual level
                yv = yv - (xn - xv) / vyy
            if xn <= 0.0:
                # exact zero-consumption continuation from t+dt onward
                vacc += ds * edr * (-k / (r * b2)) * (lam * hv) ** b2
                veacc += ds * edr * (-k / (r * b2)) * (lam * hv) ** b2
                xv = 0.0
                ab = True
                if tau_z[p] < 0.0:
                    tau_z[p] = t + dt
                t_abs[p] = t + dt
                break
            if xn > xl:
                hn, wn, c6n = _ratchet(hv, wv, c6s, xn, nodes, node_c6, C)
                if tau_l[p] < 0.0:
                    tau_l[p] = t + dt
                if stop_mode == STOP_AT_PEAK:
                    xv = xn
                    hv, wv, c6s = hn, wn, c6n
                    dn = True
                    break
                hv, wv, c6s = hn, wn, c6n
                c2, c3, c4, c5, y1, y2, y3, xz, xa, xl = _bundle(hv, wv, c6s, C)
                uI = -k * (lam * hv) ** b2 / b2
                uIII = ((1.0 - lam) * hv) ** b1 / b1
                yv = y3
            xv = xn
        x[p] = xv
        h[p] = hv
        w[p] = wv
        c6v[p] = c6s
        yw[p] = yv
        lm[p] = lmv
        if ab:
            absorbed[p] = 1
            done[p] = 1
        if dn:
            done[p] = 1
        val[p] += vacc
        val_env[p] += veacc
        budget[p] += bacc
        occ_zero[p] += ozacc
        occ_peak[p] += opacc


@njit(cache=True, parallel=True, fastmath=True)
def dual_chunk(z, disc, anti, t0, dt, burn_t, stop_mode, y_star, C, nodes, node_c6,
               u, umin, h, w, lm, done,
               budget, occ_zero, occ_peak, tau_z, tau_l,
               bridge, uni):
    """Advance a chunk of exact dual paths (u = log Y) through one block.

    Y is the driftless exponential martingale Y_t = y* exp(-kap^2 t/2 - kap W_t);
    the peak process is the running-minimum transform.  Consumption follows
    the dual feedback form; `budget` accumulates c * M dt.  With bridge != 0
    the running minimum between grid points is refined by sampling the
    Brownian-bridge minimum (one uniform per step from `uni`).
    """
    npaths = u.shape[0]
    nsteps = z.shape[1]
    r, kap = C[R], C[KAPPA]
    b1, b2, k, lam = C[B1], C[B2], C[KLOSS], C[LAM]
    csth = C[CSTH]  # (1-lam)^(-b1/(b1-1))
    sq = math.sqrt(dt)
    ustep = -0.5 * kap * kap * dt
    for p in prange(npaths):
        if done[p] != 0:
            continue
        uv = u[p]
        umv = umin[p]
        hv = h[p]
        wv = w[p]
        lmv = lm[p]
        dn = False
        y1, y2, y3 = _levels(hv, wv, C)
        bacc = 0.0
        ozacc = 0.0
        opacc = 0.0
        for s in range(nsteps):
            t = t0 + s * dt
            if anti != 0:
                zz = z[p // 2, s] * (1.0 - 2.0 * (p & 1))
            else:
                zz = z[p, s]
            Y = math.exp(uv)
            # hitting bookkeeping (pre-step state)
            if Y >= y1:
                if tau_z[p] < 0.0:
                    tau_z[p] = t
                if stop_mode == STOP_AT_ZERO:
                    dn = True
                    break
            if Y <= y3 * (1.0 + 1e-12):
                if tau_l[p] < 0.0:
                    tau_l[p] = t
                if stop_mode == STOP_AT_PEAK:
                    dn = True
                    break
            if t >= burn_t:
                if Y > y1:
                    ozacc += dt
                elif y3 <= Y < y2:
                    opacc += dt
            # consumption under the dual feedback
            if Y > y1:
                cc = 0.0
            elif Y >= y2:
                cc = lam * hv + math.exp(uv / (b1 - 1.0))
            else:
                cc = hv
            if cc > 0.0:
                bacc += cc * Y * disc[s] / y_star * dt
            # exact lognormal increment
            u_prev = uv
            uv += ustep - kap * sq * zz
            lmv += -(r + 0.5 * kap * kap) * dt - kap * sq * zz
            u_low = uv
            if bridge != 0:
                # conditional minimum of the Brownian bridge over the step
                uu = uni[p // 2, s] if anti != 0 else uni[p, s]
                if uu < 1e-300:
                    uu = 1e-300
                span = u_prev - uv
                u_low = 0.5 * (u_prev + uv
                               - math.sqrt(span * span
                                           - 2.0 * kap * kap * dt * math.log(uu)))
            if u_low < umv:
                umv = u_low
                hn = csth * math.exp(umv / (b1 - 1.0))
                if hn > hv:
                    scale = hn / hv
                    hv = hn
                    wv = _w_solve(hv, wv * scale, C)
                    y1, y2, y3 = _levels(hv, wv, C)
        u[p] = uv
        umin[p] = umv
        h[p] = hv
        w[p] = wv
        lm[p] = lmv
        done[p] = 1 if dn else 0
        budget[p] += bacc
        occ_zero[p] += ozacc
        occ_peak[p] += opacc
