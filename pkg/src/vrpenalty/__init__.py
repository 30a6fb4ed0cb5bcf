"""Stochastic quadratic-penalty solvers with truncated momentum estimators.

Two first-order methods for equality-constrained stochastic problems
min E f(x, xi) s.t. c(x) = 0, x in X, plus the diagnostics and experiment
harness used to check their rate and feasibility guarantees.
"""

__version__ = "0.1.0"

from .diagnostics import (
    GDistribution,
    MonitorTally,
    RateFit,
    error_bound_falsifier,
    fit_power_law,
    fit_rate,
    lemma_monitor_rec,
    stationarity_report,
    surrogate_bound,
    variance_replicate_check,
)
from .errors import (
    CertificationError,
    ConfigurationError,
    ContractError,
    DivergenceError,
    DomainError,
    InputError,
    InsufficientDataError,
    PreconditionError,
    ReportError,
    VRPenaltyError,
)
from .estimators import EstimatorState, init_estimator, truncate_ball, update_polyak, update_recursive
from .problem import (
    FeasibleSet,
    InequalityConstraint,
    ProblemInstance,
    SmoothnessConstants,
    eval_constraint,
    normal_cone_distance,
    project_feasible,
    sample_gradient,
)
from .rng import SampleContext
from .schedules import ScheduleFamily, ScheduleValues, TheoryConstants, schedule_at, step_condition_holds, theory_constants
from .solvers import RunConfig, RunRecord, SolverState, TerminalCertificate, run, run_mixed, select_iterate, solver_step
from .testproblems import make_test_problem, parse_descriptor

__all__ = [name for name in dir() if not name.startswith("_")]
