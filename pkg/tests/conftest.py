import os

import pytest

from peakref import ModelParams, DualSolver, PolicySolver, Simulator

P0 = ModelParams(r=0.05, rho=0.05, mu=0.1, sigma=0.25,
                 beta1=0.2, beta2=0.3, k=1.5, lam=0.5)

# beta1 == beta2: boundary ratios independent of h (linear boundaries)
HOMOG = ModelParams(r=0.05, rho=0.05, mu=0.1, sigma=0.25,
                    beta1=0.2, beta2=0.2, k=1.5, lam=0.95)

# chord-to-endpoint at every h never happens here; beta2 < beta1 <= 1-lam
BETA2_LESS = ModelParams(r=0.05, rho=0.05, mu=0.1, sigma=0.25,
                         beta1=0.3, beta2=0.15, k=1.5, lam=0.5)


def fast_mode() -> bool:
    """Reduced Monte Carlo scale for development runs (not the acceptance gate)."""
    return os.environ.get("PEAKREF_FAST", "") not in ("", "0")


@pytest.fixture(scope="session")
def p0():
    return P0


@pytest.fixture(scope="session")
def p0_stack():
    dual = DualSolver(P0)
    policy = PolicySolver(dual)
    return dual, policy, Simulator(policy)


@pytest.fixture(scope="session")
def homog_stack():
    dual = DualSolver(HOMOG)
    policy = PolicySolver(dual)
    return dual, policy, Simulator(policy)
