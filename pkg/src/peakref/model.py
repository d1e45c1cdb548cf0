"""Market/preference parameters and the scalar constants derived from them.

The model: riskless rate r, one risky asset with drift mu and volatility
sigma, two-part power utility with curvatures beta1 (gains) and beta2
(losses), loss-aversion weight k, and a reference equal to the fraction
lam of the running consumption maximum.  Only the case rho == r > 0 is
supported.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

from .errors import AssumptionA1Violated, RangeError, ScopeError

_FIELDS = ("r", "rho", "mu", "sigma", "beta1", "beta2", "k", "lambda")


@dataclass(frozen=True)
class ModelParams:
    r: float
    rho: float
    mu: float
    sigma: float
    beta1: float
    beta2: float
    k: float
    lam: float  # JSON key "lambda"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return {k: d[k] for k in _FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        unknown = set(d) - set(_FIELDS)
        if unknown:
            raise RangeError(f"unknown parameter keys: {sorted(unknown)}")
        missing = set(_FIELDS) - set(d)
        if missing:
            raise RangeError(f"missing parameter keys: {sorted(missing)}")
        vals = {}
        for key in _FIELDS:
            v = d[key]
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise RangeError(f"parameter {key!r} must be a number, got {v!r}")
            vals[key] = float(v)
        vals["lam"] = vals.pop("lambda")
        return cls(**vals)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class DerivedConstants:
    kappa: float      # Sharpe ratio (mu - r) / sigma
    r1: float         # positive root of eta^2 - eta - 2r/kappa^2, > 1
    r2: float         # negative root, < 0
    gamma1: float     # beta1 / (beta1 - 1), < 0
    gamma2: float     # beta2 / (beta2 - 1), < 0
    merton_c: float   # Merton consumption-wealth ratio for the gain-side power utility
    merton_pi: float  # Merton risky-fraction for the gain-side power utility
    a1_bound: float   # -r2/r1; validation requires beta_j < a1_bound

    def to_dict(self) -> dict:
        return asdict(self)


def validate(params: ModelParams) -> DerivedConstants:
    """Check parameter ranges, the rho == r scope restriction, and the root condition.

    Returns the derived constants on success.  Raises RangeError, ScopeError,
    or AssumptionA1Violated otherwise.
    """
    p = params
    for name in ("r", "rho", "mu", "sigma", "beta1", "beta2", "k"):
        v = getattr(p, name)
        if not math.isfinite(v):
            raise RangeError(f"{name} must be finite, got {v}")
    if not math.isfinite(p.lam):
        raise RangeError(f"lambda must be finite, got {p.lam}")
    if p.r <= 0:
        raise RangeError(f"need r > 0, got r={p.r}")
    if p.mu <= p.r:
        raise RangeError(f"need mu > r, got mu={p.mu}, r={p.r}")
    if p.sigma <= 0:
        raise RangeError(f"need sigma > 0, got sigma={p.sigma}")
    if not (0 < p.beta1 < 1):
        raise RangeError(f"need 0 < beta1 < 1, got beta1={p.beta1}")
    if not (0 < p.beta2 < 1):
        raise RangeError(f"need 0 < beta2 < 1, got beta2={p.beta2}")
    if p.k <= 0:
        raise RangeError(f"need k > 0, got k={p.k}")
    if not (0 < p.lam < 1):
        # lam == 1 (pure ratcheting) is rejected: the envelope formulas divide
        # by powers of (1 - lam).
        raise RangeError(f"need 0 < lambda < 1, got lambda={p.lam}")
    if p.rho != p.r:
        raise ScopeError(f"only rho == r is supported, got rho={p.rho}, r={p.r}")

    kappa = (p.mu - p.r) / p.sigma
    c = 2.0 * p.r / kappa**2
    disc = math.sqrt(1.0 + 4.0 * c)
    r1 = 0.5 * (1.0 + disc)
    r2 = 0.5 * (1.0 - disc)
    bound = -r2 / r1
    for j, beta in ((1, p.beta1), (2, p.beta2)):
        if beta >= bound:
            raise AssumptionA1Violated(
                f"beta{j}={beta} >= -r2/r1={bound:.6f}; "
                "the dual solution requires beta_j < -r2/r1"
            )
    gamma1 = p.beta1 / (p.beta1 - 1.0)
    gamma2 = p.beta2 / (p.beta2 - 1.0)
    merton_c = p.r * (gamma1 - r1) * (gamma1 - r2) / (r1 * r2)
    merton_pi = (p.mu - p.r) / (p.sigma**2 * (1.0 - p.beta1))
    return DerivedConstants(
        kappa=kappa, r1=r1, r2=r2, gamma1=gamma1, gamma2=gamma2,
        merton_c=merton_c, merton_pi=merton_pi, a1_bound=bound,
    )


def load_config(path: str) -> ModelParams:
    """Read a ModelParams JSON document from disk."""
    with open(path, "r", encoding="utf-8") as fh:
        return ModelParams.from_json(fh.read())
