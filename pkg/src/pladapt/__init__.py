"""Adaptive gradient methods for PL functions with an inexact gradient.

The package provides a noisy first-order oracle, benchmark problems, three
gradient methods (constant step, adaptive ``L``, adaptive ``L`` and noise
level), evaluators for their theoretical guarantees and a small benchmark
harness with a command-line front end.
"""

from .exceptions import (ConfigError, EstimationError, InfiniteBoundError,
                         NumericalDivergenceError)
from .noise_oracle import InexactOracle, NoiseMode, NoiseSpec
from .problems import (LogisticProblem, ProblemInstance, QuadraticProblem,
                       TrigSystemProblem, make_logistic, make_problem,
                       make_quadratic, make_trig_system)
from .solvers import (IterationRecord, Method, RunResult, SolverConfig, StopReason,
                      run_adaptive_L, run_adaptive_L_delta, run_constant_step,
                      run_method)
from .guarantees import GuaranteeInputs, GuaranteeReport, verify_run

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "EstimationError", "InfiniteBoundError", "NumericalDivergenceError",
    "InexactOracle", "NoiseMode", "NoiseSpec",
    "ProblemInstance", "QuadraticProblem", "LogisticProblem", "TrigSystemProblem",
    "make_quadratic", "make_logistic", "make_trig_system", "make_problem",
    "Method", "StopReason", "SolverConfig", "IterationRecord", "RunResult",
    "run_constant_step", "run_adaptive_L", "run_adaptive_L_delta", "run_method",
    "GuaranteeInputs", "GuaranteeReport", "verify_run",
]
