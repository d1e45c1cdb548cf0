"""S-shaped utility and its constrained concave envelope on [0, h].

For a fixed reference level h the realization utility U(c - lam*h) is
convex-concave in c.  Its concave envelope on [0, h] is linear from
(0, U2*(0,h)) up to a tangent point z(h) and coincides with the gain
branch beyond.  The gap w(h) = z(h) - lam*h solves the tangency equation

    (1-beta1)/beta1 * w^beta1 + (k/beta2)*(lam*h)^beta2 - lam*h*w^(beta1-1) = 0

whenever an interior tangent exists; otherwise the envelope is the chord to
the endpoint c = h and w(h) = (1-lam)*h.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError
from .model import ModelParams

TANGENT_INTERIOR = "TangentInterior"
CHORD_TO_ENDPOINT = "ChordToEndpoint"


@dataclass(frozen=True)
class EnvelopePoint:
    h: float
    subcase: str           # TANGENT_INTERIOR or CHORD_TO_ENDPOINT
    z: float               # tangent point, lam*h < z <= h
    w: float               # z - lam*h
    wprime: float          # dw/dh
    envelope_slope: float  # slope of the linear piece of the envelope


def utility(params: ModelParams, x: float) -> float:
    """Two-part power utility: x^b1/b1 on gains, -k(-x)^b2/b2 on losses."""
    if x > 0:
        return x**params.beta1 / params.beta1
    if x < 0:
        return -params.k * (-x) ** params.beta2 / params.beta2
    return 0.0


def is_chord_subcase(params: ModelParams, h: float) -> bool:
    """True when the envelope is the chord to the endpoint (z(h) = h).

    Decided by the sign of the endpoint tangency condition
    U1*(h,h) - U2*(0,h) - h*U1*'(h,h) evaluated directly.
    """
    b1, b2, k, lam = params.beta1, params.beta2, params.k, params.lam
    phi = ((1.0 / b1) * ((1 - lam) * h) ** b1
           + (k / b2) * (lam * h) ** b2
           - h * ((1 - lam) * h) ** (b1 - 1))
    return phi <= 0.0


def chord_switch_level(params: ModelParams):
    """The h at which the subcase switches, or None when no switch occurs.

    The endpoint condition divided by h^beta1 is monotone in h (single
    h^(beta2-beta1) term), so there is at most one switch.
    """
    b1, b2, k, lam = params.beta1, params.beta2, params.k, params.lam
    const = (1.0 / b1) * (1 - lam) ** b1 - (1 - lam) ** (b1 - 1)
    if b2 == b1:
        return None
    if const >= 0:
        return None  # interior tangent for every h
    return ((-const) * b2 / (k * lam**b2)) ** (1.0 / (b2 - b1))


def tangency_residual(params: ModelParams, h: float, w: float) -> float:
    b1, b2, k, lam = params.beta1, params.beta2, params.k, params.lam
    return ((1 - b1) / b1 * w**b1
            + (k / b2) * (lam * h) ** b2
            - lam * h * w ** (b1 - 1))


def tangent_point(params: ModelParams, h: float) -> EnvelopePoint:
    """Solve for the tangent point of the concave envelope at reference level h."""
    if not (h > 0) or not np.isfinite(h):
        raise DomainError(f"need h > 0, got h={h}")
    b1, b2, k, lam = params.beta1, params.beta2, params.k, params.lam
    if is_chord_subcase(params, h):
        w = (1 - lam) * h
        z = h
        slope = (k * (lam * h) ** b2 / b2 + w**b1 / b1) / z
        return EnvelopePoint(h=h, subcase=CHORD_TO_ENDPOINT, z=z, w=w,
                             wprime=1 - lam, envelope_slope=slope)
    # The residual is strictly increasing in w, -> -inf as w -> 0+, and > 0
    # at w = (1-lam)h in this subcase: bracketed bisection in log w, then a
    # Newton polish.
    w = float(w_bisect(params, np.asarray([h]))[0])
    w = float(w_newton(params, np.asarray([h]), np.asarray([w]))[0])
    if not np.isfinite(w) or w <= 0:
        raise ConvergenceError(f"tangency solve failed at h={h}")
    z = lam * h + w
    num = w ** (b1 - 1) - k * (lam * h) ** (b2 - 1)
    den = w ** (b1 - 1) + lam * h * w ** (b1 - 2)
    wprime = lam / (1 - b1) * num / den
    return EnvelopePoint(h=h, subcase=TANGENT_INTERIOR, z=z, w=w,
                         wprime=wprime, envelope_slope=w ** (b1 - 1))


def concave_envelope(params: ModelParams, c: float, h: float) -> float:
    """The concave envelope of U(c - lam*h) over c in [0, h]."""
    if not (h > 0):
        raise DomainError(f"need h > 0, got h={h}")
    if c < 0 or c > h * (1 + 1e-12):
        raise DomainError(f"need 0 <= c <= h, got c={c}, h={h}")
    b1, b2, k, lam = params.beta1, params.beta2, params.k, params.lam
    pt = tangent_point(params, h)
    u2_0 = -k / b2 * (lam * h) ** b2
    if c < pt.z:
        u1_z = pt.w**b1 / b1
        return u2_0 + (u1_z - u2_0) / pt.z * c
    return (c - lam * h) ** b1 / b1


# ---------------------------------------------------------------------------
# Vectorized tangency solvers (shared by the dual solver and simulators).
# ---------------------------------------------------------------------------

def chord_mask(params: ModelParams, h: np.ndarray) -> np.ndarray:
    b1, b2, k, lam = params.beta1, params.beta2, params.k, params.lam
    phi = ((1.0 / b1) * (1 - lam) ** b1
           - (1 - lam) ** (b1 - 1)
           + (k / b2) * lam**b2 * h ** (b2 - b1))
    return phi <= 0.0


def w_bisect(params: ModelParams, h: np.ndarray) -> np.ndarray:
    """Vectorized tangency solve by bisection in log w (robust, no warm start)."""
    b1, b2, k, lam = params.beta1, params.beta2, params.k, params.lam
    h = np.asarray(h, dtype=float)
    chord = chord_mask(params, h)
    w = np.where(chord, (1 - lam) * h, np.nan)
    it = ~chord
    if np.any(it):
        hh = h[it]
        # Left end deep enough that the -lam*h*w^(beta1-1) term dominates even
        # for beta1 close to 1; exp underflow there is harmless (residual -inf).
        lo = np.log(hh) - max(120.0, 40.0 / (1.0 - b1))
        hi = np.log((1 - lam) * hh)
        for _ in range(90):
            mid = 0.5 * (lo + hi)
            wm = np.exp(mid)
            res = ((1 - b1) / b1 * wm**b1
                   + (k / b2) * (lam * hh) ** b2
                   - lam * hh * wm ** (b1 - 1))
            lo = np.where(res < 0, mid, lo)
            hi = np.where(res >= 0, mid, hi)
        w[it] = np.exp(0.5 * (lo + hi))
    return w


def w_newton(params: ModelParams, h: np.ndarray, w_init: np.ndarray) -> np.ndarray:
    """Vectorized warm-started Newton for the tangency root with bisection clamps."""
    b1, b2, k, lam = params.beta1, params.beta2, params.k, params.lam
    h = np.asarray(h, dtype=float)
    chord = chord_mask(params, h)
    cap = (1 - lam) * h
    w = np.where(chord, cap, np.clip(w_init, 1e-300, cap * (1 - 1e-13)))
    it = ~chord
    if np.any(it):
        hh, ww = h[it], w[it]
        capi = cap[it]
        lo = np.zeros_like(ww)
        hi = capi.copy()
        for _ in range(60):
            res = ((1 - b1) / b1 * ww**b1
                   + (k / b2) * (lam * hh) ** b2
                   - lam * hh * ww ** (b1 - 1))
            lo = np.where(res < 0, ww, lo)
            hi = np.where(res >= 0, ww, hi)
            grad = (1 - b1) * ww ** (b1 - 1) - lam * hh * (b1 - 1) * ww ** (b1 - 2)
            wn = ww - res / grad
            bad = ~((wn > lo) & (wn < hi))
            wn = np.where(bad, 0.5 * (lo + hi), wn)
            if np.all(np.abs(wn - ww) <= 1e-15 * wn):
                ww = wn
                break
            ww = wn
        w[it] = ww
    return w
