"""Value-function bisection for simple bilevel convex optimization.

Minimize a composite convex upper objective ``f = f1 + f2`` over the
minimizers of a composite convex lower objective ``g = g1 + g2``. The
solver bisects on the level ``c`` of ``f``; each level is decided by a
strongly convex level-constrained lower subproblem solved through its
Lagrange dual with accelerated proximal gradient inner solves.
"""

from .apg import (ApgConvexConfig, ApgStrongConfig, ConvexResult, StationarityCertificate,
                  apg_convex, apg_strongly_convex)
from .composite import (BilevelInstance, CompositeObjective, QueryCounter, SmoothOracle,
                        evaluate, make_least_squares, make_quadratic_form, make_zero_smooth)
from .dual import (InnerOptions, IntervalKind, KktResidual, MultiplierInterval, Subproblem,
                   ToleranceSchedule, dual_bisection, interval_search, solve_subproblem)
from .errors import (BivfaError, ConfigurationError, InputDomainError, NumericalFailure,
                     ReferenceUnavailableError, TheoryViolationError, UnsupportedInstanceError)
from .problems import (InstanceData, InstanceSpec, ReferenceValues, build_instance, generate,
                       generate_data, reference_solve)
from .prox import ProxOracle, combined_prox
from .solver import Branch, ExitKind, OuterConfig, SolveReport, TraceRow, solve

__version__ = "0.1.0"

__all__ = [
    "ApgConvexConfig", "ApgStrongConfig", "ConvexResult", "StationarityCertificate",
    "apg_convex", "apg_strongly_convex",
    "BilevelInstance", "CompositeObjective", "QueryCounter", "SmoothOracle", "evaluate",
    "make_least_squares", "make_quadratic_form", "make_zero_smooth",
    "InnerOptions", "IntervalKind", "KktResidual", "MultiplierInterval", "Subproblem",
    "ToleranceSchedule", "dual_bisection", "interval_search", "solve_subproblem",
    "BivfaError", "ConfigurationError", "InputDomainError", "NumericalFailure",
    "ReferenceUnavailableError", "TheoryViolationError", "UnsupportedInstanceError",
    "InstanceData", "InstanceSpec", "ReferenceValues", "build_instance", "generate",
    "generate_data", "reference_solve",
    "ProxOracle", "combined_prox",
    "Branch", "ExitKind", "OuterConfig", "SolveReport", "TraceRow", "solve",
]
