"""Gradient methods driven by an inexact oracle.

Three methods share one trace format:

* :func:`run_constant_step` -- fixed step ``1/(2L)`` with a known noise level.
* :func:`run_adaptive_L` -- backtracking on ``L`` with a known noise level.
* :func:`run_adaptive_L_delta` -- backtracking on both ``L`` and the noise
  estimate ``Delta_k``; needs neither constant.

Trace row ``k`` describes the point ``x_k`` together with the parameters of
the accepted step leaving it. The last row is the output point; its ``L_k``
is the value the next iteration would start from.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import NumericalDivergenceError
from .noise_oracle import InexactOracle

SQRT6 = math.sqrt(6.0)
_EPS = np.finfo(float).eps


class Method(enum.Enum):
    CONSTANT_STEP = "constant"
    ADAPTIVE_L = "adaptive_L"
    ADAPTIVE_L_DELTA = "adaptive_L_delta"


class StopReason(enum.Enum):
    GRADIENT_CRITERION = "gradient_criterion"
    ITERATION_CAP = "iteration_cap"
    BACKTRACK_CAP = "backtrack_cap"


@dataclass(frozen=True)
class SolverConfig:
    """Solver parameters.

    ``L_0`` and ``Delta_0`` default to ``L_min`` and ``Delta_min``.
    ``abs_tol`` is an extra absolute stopping threshold on the inexact
    gradient norm. With an exact oracle it is the only effective rule for
    the known-noise methods (``c * 0 = 0``); the adaptive-(L, Delta) method
    keeps its own relative rule as well, since that rule is what stops it
    once ``Delta_k`` starts to grow.
    ``store_iterates=False`` keeps only the final point in the trace.
    """

    L_min: float = 1e-4
    L_0: float | None = None
    Delta_0: float | None = None
    Delta_min: float = 1e-12
    delta_f: float = 0.0
    stop_multiplier: float = SQRT6
    max_iterations: int = 10**6
    max_inner_backtracks: int = 200
    abs_tol: float = 0.0
    store_iterates: bool = True

    def __post_init__(self):
        if self.L_0 is None:
            object.__setattr__(self, "L_0", self.L_min)
        if self.Delta_0 is None:
            object.__setattr__(self, "Delta_0", self.Delta_min)
        if not self.L_min > 0:
            raise ValueError(f"L_min must be positive, got {self.L_min}")
        if not self.L_0 >= self.L_min:
            raise ValueError(f"L_0={self.L_0} must be >= L_min={self.L_min}")
        if not self.Delta_min > 0:
            raise ValueError(f"Delta_min must be positive, got {self.Delta_min}")
        if not self.Delta_0 >= self.Delta_min:
            raise ValueError(f"Delta_0={self.Delta_0} must be >= Delta_min={self.Delta_min}")
        if not self.delta_f >= 0:
            raise ValueError(f"delta_f must be >= 0, got {self.delta_f}")
        if not self.stop_multiplier > 0:
            raise ValueError(f"stop_multiplier must be positive, got {self.stop_multiplier}")
        if self.max_iterations < 1 or self.max_inner_backtracks < 1:
            raise ValueError("iteration caps must be positive")
        if not self.abs_tol >= 0:
            raise ValueError(f"abs_tol must be >= 0, got {self.abs_tol}")


@dataclass(frozen=True)
class IterationRecord:
    k: int
    x: np.ndarray | None
    f_exact: float
    grad_tilde_norm: float
    L_k: float
    Delta_k: float
    n_backtracks: int
    n_func_calls_cum: int
    n_grad_calls_cum: int
    # inexact value used by the adaptive-L acceptance test; nan elsewhere
    f_tilde: float = math.nan


@dataclass(frozen=True)
class RunResult:
    method: Method
    trace: list
    x_hat: np.ndarray
    stop_reason: StopReason
    wall_time: float
    delta_max_observed: float
    config: SolverConfig
    n_func_calls: int = 0
    n_grad_calls: int = 0
    # noise level / smoothness handed to the known-constant methods
    delta_known: float | None = None
    L_fixed: float | None = None
    x0: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_iterations(self) -> int:
        return len(self.trace) - 1

    @property
    def L_max_observed(self) -> float:
        return max(r.L_k for r in self.trace[:-1]) if len(self.trace) > 1 else self.trace[0].L_k


# ---------------------------------------------------------------------------
# acceptance tests

def stopping_reached(grad_tilde_norm: float, delta_ref: float, multiplier: float) -> bool:
    return grad_tilde_norm <= multiplier * delta_ref


def check_condition_alg1(f_tilde_next, f_tilde_cur, g, step, L_k, Delta, delta_f) -> bool:
    """Inexact descent test of the adaptive-L method.

    ``f~(x+) <= f~(x) + <g, s> + L ||s||^2 + Delta^2 / (2L) + 2 delta_f``
    """
    rhs = (f_tilde_cur + float(np.dot(g, step)) + L_k * float(np.dot(step, step))
           + Delta**2 / (2.0 * L_k) + 2.0 * delta_f)
    return bool(f_tilde_next <= rhs)


def check_condition_alg2(f_next, f_cur, g, step, L_k, Delta_k) -> bool:
    """Descent test of the adaptive-(L, Delta) method.

    ``f(x+) <= f(x) + <g, s> + Delta_k ||s|| + (L_k / 2) ||s||^2``
    """
    s2 = float(np.dot(step, step))
    rhs = f_cur + float(np.dot(g, step)) + Delta_k * math.sqrt(s2) + 0.5 * L_k * s2
    return bool(f_next <= rhs)


def minimal_delta_k(f_next, f_cur, g, step, L_k, Delta_min, Delta_floor) -> float:
    """Smallest ``Delta_k >= max(Delta_min, Delta_floor)`` passing the test.

    The test is affine in ``Delta_k`` so the threshold has a closed form.
    The result is nudged upward if rounding makes the closed form miss.
    """
    base = max(Delta_min, Delta_floor)
    s2 = float(np.dot(step, step))
    if s2 == 0.0:
        return base
    s_norm = math.sqrt(s2)
    gs = float(np.dot(g, step))
    value = max((f_next - f_cur - gs - 0.5 * L_k * s2) / s_norm, base)
    bump = 4.0 * _EPS * (abs(f_next) + abs(f_cur) + abs(gs) + 0.5 * L_k * s2) / s_norm
    while not check_condition_alg2(f_next, f_cur, g, step, L_k, value):
        value += bump
        bump *= 2.0
    return value


# ---------------------------------------------------------------------------
# solvers

class _Tracer:
    """Accumulates trace rows and assembles the final RunResult."""

    def __init__(self, method, oracle, config, **extra):
        self.method = method
        self.oracle = oracle
        self.problem = oracle.problem
        self.config = config
        self.extra = extra
        self.trace = []
        self.start = time.perf_counter()
        self.x0 = np.array(oracle.problem.x0, dtype=float)

    def record(self, k, x, gnorm, L_k, Delta_k=0.0, n_backtracks=0, f_tilde=math.nan,
               f_exact=None):
        if f_exact is None:
            f_exact = self.problem.f(x)
        keep = self.config.store_iterates or k == 0
        self.trace.append(IterationRecord(
            k=k, x=np.array(x) if keep else None, f_exact=float(f_exact),
            grad_tilde_norm=float(gnorm), L_k=float(L_k), Delta_k=float(Delta_k),
            n_backtracks=int(n_backtracks), n_func_calls_cum=self.oracle.n_func_calls,
            n_grad_calls_cum=self.oracle.n_grad_calls, f_tilde=float(f_tilde)))

    def finish(self, x_hat, reason, delta_max=0.0) -> RunResult:
        last = self.trace[-1]
        if last.x is None:
            self.trace[-1] = replace(last, x=np.array(x_hat))
        return RunResult(
            method=self.method, trace=self.trace, x_hat=np.array(x_hat), stop_reason=reason,
            wall_time=time.perf_counter() - self.start, delta_max_observed=float(delta_max),
            config=self.config, n_func_calls=self.oracle.n_func_calls,
            n_grad_calls=self.oracle.n_grad_calls, x0=self.x0, **self.extra)

    def diverged(self, x, delta_max=0.0):
        partial = self.finish(self.trace[-1].x if self.trace else self.x0,
                              StopReason.ITERATION_CAP, delta_max)
        raise NumericalDivergenceError(
            f"non-finite iterate after {len(self.trace)} iterations", partial)


def _converged(gnorm, delta_ref, config) -> bool:
    return stopping_reached(gnorm, delta_ref, config.stop_multiplier) or gnorm <= config.abs_tol


def run_constant_step(oracle: InexactOracle, L: float, config: SolverConfig) -> RunResult:
    """Inexact gradient descent ``x+ = x - g / (2L)``.

    Stops once ``||g|| <= stop_multiplier * Delta`` with ``Delta`` read from
    the oracle's noise spec, or after ``max_iterations`` steps. One gradient
    call per visited point, no function calls.
    """
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    delta = oracle.noise.gradient_noise
    tr = _Tracer(Method.CONSTANT_STEP, oracle, config, delta_known=delta, L_fixed=float(L))
    x = tr.x0.copy()
    k = 0
    while True:
        g = oracle.grad_tilde(x)
        gnorm = float(np.linalg.norm(g))
        tr.record(k, x, gnorm, L)
        if _converged(gnorm, delta, config):
            return tr.finish(x, StopReason.GRADIENT_CRITERION)
        if k == config.max_iterations:
            return tr.finish(x, StopReason.ITERATION_CAP)
        x = x - g / (2.0 * L)
        if not np.all(np.isfinite(x)):
            tr.diverged(x)
        k += 1


def run_adaptive_L(oracle: InexactOracle, Delta_known: float, config: SolverConfig) -> RunResult:
    """Backtracking on ``L`` with a known gradient noise level.

    Each outer iteration draws one inexact gradient and reuses it while
    ``L_k`` is doubled. The inexact value at an accepted point is carried
    over to the next iteration rather than re-queried.
    """
    if not Delta_known >= 0:
        raise ValueError(f"Delta_known must be >= 0, got {Delta_known}")
    tr = _Tracer(Method.ADAPTIVE_L, oracle, config, delta_known=float(Delta_known))
    x = tr.x0.copy()
    L = config.L_0
    f_cur = oracle.f_tilde(x)
    k = 0
    while True:
        g = oracle.grad_tilde(x)
        gnorm = float(np.linalg.norm(g))
        if _converged(gnorm, Delta_known, config):
            tr.record(k, x, gnorm, L, f_tilde=f_cur)
            return tr.finish(x, StopReason.GRADIENT_CRITERION)
        if k == config.max_iterations:
            tr.record(k, x, gnorm, L, f_tilde=f_cur)
            return tr.finish(x, StopReason.ITERATION_CAP)

        n_bt = 0
        while True:
            step = g / (-2.0 * L)
            x_new = x + step
            f_new = oracle.f_tilde(x_new)
            if check_condition_alg1(f_new, f_cur, g, step, L, Delta_known, config.delta_f):
                break
            if n_bt == config.max_inner_backtracks:
                tr.record(k, x, gnorm, L, n_backtracks=n_bt, f_tilde=f_cur)
                return tr.finish(x, StopReason.BACKTRACK_CAP)
            n_bt += 1
            L *= 2.0

        tr.record(k, x, gnorm, L, n_backtracks=n_bt, f_tilde=f_cur)
        if not np.all(np.isfinite(x_new)):
            tr.diverged(x_new)
        x, f_cur = x_new, f_new
        L = max(L / 2.0, config.L_min)
        k += 1


def run_adaptive_L_delta(oracle: InexactOracle, config: SolverConfig) -> RunResult:
    """Backtracking on both ``L_k`` and the noise estimate ``Delta_k``.

    Per iteration: start from ``max(L_prev / 2, L_min)``; double ``L_k`` and
    ``Delta_k`` together until the descent test passes; shrink ``Delta_k``
    to the smallest admissible value; then halve ``L_k`` while the test
    still holds, keeping the last passing pair. The test uses exact function
    values (counted as oracle function calls).

    The run stops at ``x_k`` once ``||g(x_k)|| <= stop_multiplier *
    max_{j<=k} Delta_j``; the step computed from the final point is
    discarded.
    """
    tr = _Tracer(Method.ADAPTIVE_L_DELTA, oracle, config)
    x = tr.x0.copy()
    f_cur = oracle.f_exact(x)
    L_prev = None
    floor = 0.0  # max_{j<k} Delta_j
    k = 0
    while True:
        g = oracle.grad_tilde(x)
        gnorm = float(np.linalg.norm(g))

        if L_prev is None:
            L, delta_k = config.L_0, config.Delta_0
        else:
            L, delta_k = max(L_prev / 2.0, config.L_min), floor

        n_bt = 0
        while True:
            step = g / (-2.0 * L)
            x_new = x + step
            f_new = oracle.f_exact(x_new)
            if check_condition_alg2(f_new, f_cur, g, step, L, delta_k):
                break
            if n_bt == config.max_inner_backtracks:
                tr.record(k, x, gnorm, L, max(delta_k, floor), n_bt, f_exact=f_cur)
                return tr.finish(x, StopReason.BACKTRACK_CAP, max(floor, delta_k))
            n_bt += 1
            L *= 2.0
            delta_k *= 2.0

        delta_k = minimal_delta_k(f_new, f_cur, g, step, L, config.Delta_min, floor)

        while True:
            L_try = max(L / 2.0, config.L_min)
            if not L_try < L:
                break
            step_try = g / (-2.0 * L_try)
            x_try = x + step_try
            f_try = oracle.f_exact(x_try)
            if not check_condition_alg2(f_try, f_cur, g, step_try, L_try, delta_k):
                break
            L, x_new, f_new = L_try, x_try, f_try

        delta_max = max(floor, delta_k)
        tr.record(k, x, gnorm, L, delta_k, n_bt, f_exact=f_cur)
        if _converged(gnorm, delta_max, config):
            return tr.finish(x, StopReason.GRADIENT_CRITERION, delta_max)
        if k == config.max_iterations:
            return tr.finish(x, StopReason.ITERATION_CAP, delta_max)
        if not np.all(np.isfinite(x_new)):
            tr.diverged(x_new, delta_max)
        x, f_cur = x_new, f_new
        L_prev, floor = L, delta_max
        k += 1


def run_method(method, oracle: InexactOracle, config: SolverConfig, *, L=None,
               Delta_known=None) -> RunResult:
    """Dispatch on :class:`Method`; known constants default to the oracle's."""
    method = Method(method)
    if method is Method.CONSTANT_STEP:
        return run_constant_step(oracle, oracle.problem.lipschitz_L if L is None else L, config)
    if method is Method.ADAPTIVE_L:
        known = oracle.noise.gradient_noise if Delta_known is None else Delta_known
        return run_adaptive_L(oracle, known, config)
    return run_adaptive_L_delta(oracle, config)


# ---------------------------------------------------------------------------
# trace export

TRACE_HEADER = ["k", "f", "grad_tilde_norm", "L_k", "Delta_k", "n_backtracks",
                "func_calls", "grad_calls"]


def _g17(v: float) -> str:
    return format(v, ".17g")


def trace_to_csv(result_or_trace, fh=None) -> str | None:
    """Write one CSV row per trace record; floats with 17 significant digits.

    Returns the text when ``fh`` is None.
    """
    trace = getattr(result_or_trace, "trace", result_or_trace)
    out = io.StringIO() if fh is None else fh
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for r in trace:
        w.writerow([r.k, _g17(r.f_exact), _g17(r.grad_tilde_norm), _g17(r.L_k),
                    _g17(r.Delta_k), r.n_backtracks, r.n_func_calls_cum, r.n_grad_calls_cum])
    return out.getvalue() if fh is None else None


def trace_from_csv(text: str) -> list:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ValueError("trace file has no rows")
    missing = set(TRACE_HEADER) - set(rows[0])
    if missing:
        raise ValueError(f"trace file lacks columns {sorted(missing)}")
    return [IterationRecord(
        k=int(r["k"]), x=None, f_exact=float(r["f"]),
        grad_tilde_norm=float(r["grad_tilde_norm"]), L_k=float(r["L_k"]),
        Delta_k=float(r["Delta_k"]), n_backtracks=int(r["n_backtracks"]),
        n_func_calls_cum=int(r["func_calls"]), n_grad_calls_cum=int(r["grad_calls"]))
        for r in rows]
