import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from peakref import (AssumptionA1Violated, ModelParams,
                     RangeError, ScopeError, validate)
from conftest import P0


def quadratic_roots(r, kappa):
    """Independent oracle: numpy root solver for eta^2 - eta - 2r/kappa^2."""
    roots = np.sort(np.roots([1.0, -1.0, -2.0 * r / kappa**2]))
    return roots[1], roots[0]


def test_p0_roots_match_quadratic_oracle():
    d = validate(P0)
    r1, r2 = quadratic_roots(P0.r, d.kappa)
    assert d.kappa == pytest.approx(0.2, abs=0)
    assert d.r1 == pytest.approx(r1, rel=1e-12)
    assert d.r2 == pytest.approx(r2, rel=1e-12)
    # values quoted to 6 decimals
    assert d.r1 == pytest.approx(2.158312, abs=5e-7)
    assert d.r2 == pytest.approx(-1.158312, abs=5e-7)


def test_root_sum_identity_exact():
    d = validate(P0)
    assert d.r1 + d.r2 == pytest.approx(1.0, abs=1e-14)
    assert d.r1 * d.r2 == pytest.approx(-2 * P0.r / d.kappa**2, rel=1e-14)


def test_a1_violation():
    d = validate(P0)
    assert -d.r2 / d.r1 == pytest.approx(0.5367, abs=1e-4)
    with pytest.raises(AssumptionA1Violated):
        validate(ModelParams.from_dict({**P0.to_dict(), "beta2": 0.6}))


@pytest.mark.parametrize("field,value,err", [
    ("r", -0.01, RangeError),
    ("r", 0.0, RangeError),
    ("mu", 0.05, RangeError),      # mu must exceed r
    ("sigma", 0.0, RangeError),
    ("beta1", 0.0, RangeError),
    ("beta1", 1.0, RangeError),
    ("beta2", 1.2, RangeError),
    ("k", 0.0, RangeError),
    ("lambda", 0.0, RangeError),
    ("lambda", 1.0, RangeError),   # pure ratcheting excluded
    ("rho", 0.06, ScopeError),
])
def test_field_validation(field, value, err):
    d = P0.to_dict()
    d[field] = value
    with pytest.raises(err):
        validate(ModelParams.from_dict(d))


def test_json_round_trip_and_unknown_keys():
    text = json.dumps(P0.to_dict())
    again = ModelParams.from_json(text)
    assert again == P0
    with pytest.raises(RangeError, match="unknown"):
        ModelParams.from_dict({**P0.to_dict(), "extra": 1.0})
    missing = P0.to_dict()
    missing.pop("k")
    with pytest.raises(RangeError, match="missing"):
        ModelParams.from_dict(missing)


def test_merton_baseline_values():
    d = validate(P0)
    assert d.merton_c == pytest.approx(0.04375, rel=1e-12)
    assert d.merton_pi == pytest.approx(1.0, rel=1e-12)


@st.composite
def valid_params(draw):
    from hypothesis import assume
    r = draw(st.floats(0.01, 0.08))
    mu = r + draw(st.floats(0.01, 0.1))
    sigma = draw(st.floats(0.1, 0.5))
    k = draw(st.floats(0.2, 5.0))
    lam = draw(st.floats(0.05, 0.95))
    kappa = (mu - r) / sigma
    bound = validate_bound(r, kappa)
    assume(bound > 0.12)
    b1 = draw(st.floats(0.05, min(0.9, 0.95 * bound)))
    b2 = draw(st.floats(0.05, min(0.9, 0.95 * bound)))
    return ModelParams(r=r, rho=r, mu=mu, sigma=sigma, beta1=b1, beta2=b2,
                       k=k, lam=lam)


def validate_bound(r, kappa):
    r1, r2 = quadratic_roots(r, kappa)
    return -r2 / r1


@given(valid_params())
@settings(max_examples=60, deadline=None)
def test_random_params_root_identities(params):
    d = validate(params)
    assert abs(d.r1**2 - d.r1 - 2 * params.r / d.kappa**2) < 1e-12
    assert abs(d.r2**2 - d.r2 - 2 * params.r / d.kappa**2) < 1e-12
    assert d.r1 > 1 > 0 > d.r2
    assert d.merton_c > 0
    assert d.merton_pi > 0
    assert d.gamma1 > d.r2 and d.gamma2 > d.r2
    assert d.r1 * params.beta1 + d.r2 < 0
    assert d.r1 * params.beta2 + d.r2 < 0
