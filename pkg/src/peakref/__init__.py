"""Optimal consumption and investment with loss aversion around the past spending peak.

Closed-form solution of the infinite-horizon problem (dual approach with a
free boundary in the peak variable), feedback controls, diagnostics, and a
Monte Carlo verification harness.
"""

from .errors import (AssumptionA1Violated, CIConflict, ConfigError,
                     ConvergenceError, DomainError, NormalizationUnresolved,
                     PeakrefError, QuadratureError, RangeError, ScopeError)
from .model import DerivedConstants, ModelParams, load_config, validate
from .envelope import (CHORD_TO_ENDPOINT, TANGENT_INTERIOR, EnvelopePoint,
                       concave_envelope, tangent_point, utility)
from .dual import BoundaryLevels, DualCoefficients, DualSolver
from .policy import PolicyPoint, PolicySolver, WealthBoundaries
from .simulate import (CalibrationResult, OccupancyResult, PathConfig,
                       Simulator, ValueEstimate)
from .analytics import (AsymptoticReport, LongRunFractions, asymptotic_ratios,
                        expected_time_to_new_max,
                        expected_time_to_zero_consumption,
                        hitting_time_coefficients, long_run_fractions)

__version__ = "0.1.0"


def build_solvers(params: ModelParams):
    """Convenience: validated (dual, policy, simulator) stack for a parameter set."""
    dual = DualSolver(params)
    policy = PolicySolver(dual)
    sim = Simulator(policy)
    return dual, policy, sim
