"""Closed-form convergence bounds and trace audits.

All bounds take a :class:`GuaranteeInputs` holding the true smoothness ``L``,
PL constant ``mu``, initial gap ``f(x0) - f*``, the true noise ``Delta`` and
the solver floors ``L_min`` / ``Delta_min``. Logarithms are natural except
in the function-call bounds, which count doublings (base 2).

When a logarithm argument is at most 1 the iteration counts are clamped to
zero (the accuracy target already holds at the start) and the matching
first term of the distance bounds is dropped.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _toml
from .exceptions import InfiniteBoundError
from .solvers import Method, RunResult, StopReason

ROW_RTOL = 1e-12


@dataclass(frozen=True)
class GuaranteeInputs:
    L: float
    mu: float
    f0_gap: float
    Delta: float
    Delta_min: float
    L_min: float
    delta_f: float = 0.0
    L_0: float | None = None

    def __post_init__(self):
        for name in ("L", "mu", "Delta_min", "L_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("f0_gap", "Delta", "delta_f"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")

    def hypothesis_violations(self) -> list[str]:
        """Premises of the adaptive-L theorem that these inputs break."""
        out = []
        if self.L_min < self.mu / 4.0:
            out.append(f"L_min={self.L_min:g} < mu/4={self.mu / 4.0:g}")
        if self.Delta**2 < 16.0 * self.L * self.delta_f:
            out.append(f"Delta^2={self.Delta**2:g} < 16 L delta={16.0 * self.L * self.delta_f:g}")
        return out


def _log_ratio(num: float, den: float) -> float:
    """``ln(num / den)`` robust to over/underflow of the quotient."""
    if num <= 0.0:
        return -math.inf
    q = num / den
    if 0.0 < q < math.inf and q >= 1e-300:
        return math.log(q)
    return math.log(num) - math.log(den)


def _n_star(L: float, mu: float, num: float, den: float) -> int:
    if den == 0.0:
        raise InfiniteBoundError("zero noise level: the iteration bound is infinite")
    log_arg = _log_ratio(num, den)
    if log_arg <= 0.0:
        return 0
    return math.ceil(8.0 * L / mu * log_arg)


def n_star_alg1(inputs: GuaranteeInputs) -> int:
    """``ceil(8L/mu * ln(mu (f(x0) - f*) / Delta^2))``, clamped at 0."""
    return _n_star(inputs.L, inputs.mu, inputs.mu * inputs.f0_gap, inputs.Delta**2)


def distance_bound_alg1(inputs: GuaranteeInputs, gamma: float | None = None) -> float:
    """Bound on ``||x_hat - x0||`` for the adaptive-L method.

    ``gamma`` defaults to ``L / L_min``.
    """
    L, mu, gap, D = inputs.L, inputs.mu, inputs.f0_gap, inputs.Delta
    if gamma is None:
        gamma = L / inputs.L_min
    tail = 16.0 * math.sqrt(gamma * L * gap) / mu
    log_arg = _log_ratio(mu * gap, D * D) if D > 0 else math.inf
    if log_arg <= 0.0 or D == 0.0:
        return tail
    return 8.0 * D / mu * math.sqrt(gamma**2 / 2.0 + 4.0 * gamma * L / mu) * log_arg + tail


def envelopes(inputs: GuaranteeInputs) -> tuple[float, float]:
    """``(L_max, Delta_max)`` for the adaptive-(L, Delta) method.

    ``L_max = L max(Delta/Delta_min, 1)`` is the quantity entering the
    iteration bound; observed ``L_k`` may reach ``2 L_max``.
    """
    L_max = inputs.L * max(inputs.Delta / inputs.Delta_min, 1.0)
    Delta_max = 2.0 * inputs.Delta * max(inputs.L / inputs.L_min, 1.0)
    return L_max, Delta_max


def n_star_alg2(inputs: GuaranteeInputs, L_max: float | None = None,
                Delta_max: float | None = None) -> int:
    """``ceil(8 L_max/mu * ln(mu (f(x0) - f*) / (4 Delta_max^2)))``, clamped at 0.

    Passing ``L_max`` / ``Delta_max`` substitutes observed maxima.
    """
    env_L, env_D = envelopes(inputs)
    L_max = env_L if L_max is None else L_max
    Delta_max = env_D if Delta_max is None else Delta_max
    return _n_star(L_max, inputs.mu, inputs.mu * inputs.f0_gap, 4.0 * Delta_max**2)


def distance_bound_alg2(inputs: GuaranteeInputs, L_max: float | None = None,
                        Delta_max: float | None = None) -> float:
    """Distance bound for the adaptive-(L, Delta) method with ``gamma = 4 L_max / mu``."""
    env_L, env_D = envelopes(inputs)
    L_max = env_L if L_max is None else L_max
    Delta_max = env_D if Delta_max is None else Delta_max
    mu, gap = inputs.mu, inputs.f0_gap
    gamma = 4.0 * L_max / mu
    tail = 16.0 * math.sqrt(gamma * L_max * gap) / mu
    if Delta_max == 0.0:
        return tail
    log_arg = _log_ratio(mu * gap, 4.0 * Delta_max**2)
    if log_arg <= 0.0:
        return tail
    return (8.0 * Delta_max / mu * math.sqrt(gamma**2 / 2.0 + 2.0 * gamma * L_max / mu)
            * log_arg + tail)


def func_eval_bound_alg2(inputs: GuaranteeInputs, N_star: int) -> float:
    """``N* log2((4L/L_min) max(L/L_min, Delta/Delta_min))``."""
    if N_star < 0:
        raise ValueError("N_star must be >= 0")
    ratio = max(inputs.L / inputs.L_min, inputs.Delta / inputs.Delta_min)
    return N_star * math.log2(4.0 * inputs.L / inputs.L_min * ratio)


def func_eval_bound_alg1(n_iterations: int, L: float, L_0: float) -> float:
    """``2N + log2(2L / L_0)``."""
    return 2.0 * n_iterations + math.log2(2.0 * L / L_0)


def accuracy_bound(mu: float, delta_max_observed: float) -> float:
    """``5 Delta^2 / mu``: guaranteed gap when stopping at ``||g|| <= 2 Delta``."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    return 5.0 * delta_max_observed**2 / mu


# ---------------------------------------------------------------------------
# run verification

@dataclass(frozen=True)
class Check:
    name: str
    bound: float
    observed: float
    passed: bool
    rows: tuple = ()  # offending trace rows, for row-level audits
    note: str = ""


@dataclass
class GuaranteeReport:
    method: str
    N_star_alg1: int | None = None
    N_star_alg2: int | None = None
    distance_bound_alg1: float | None = None
    distance_bound_alg2: float | None = None
    L_max: float | None = None
    Delta_max: float | None = None
    gamma: float | None = None
    accuracy_bound: float | None = None
    func_eval_bound_alg2: float | None = None
    checks: list = field(default_factory=list)
    hypothesis_violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def to_text(self) -> str:
        doc = {k: v for k, v in asdict(self).items()
               if k not in ("checks", "hypothesis_violations")}
        doc["passed"] = self.passed
        doc["hypothesis_violations"] = list(self.hypothesis_violations)
        doc["checks"] = {
            c.name: {"bound": c.bound, "observed": c.observed, "passed": c.passed,
                     "rows": list(c.rows), "note": c.note or None}
            for c in self.checks}
        return _toml.dumps(doc)


def _tol(*terms) -> float:
    return ROW_RTOL * max(1.0, *(abs(t) for t in terms))


def eq15_violations(trace) -> list[int]:
    """Rows ``k`` with ``f_{k+1} - f_k > Delta_k^2/(2L_k) - ||g_k||^2/(4L_k)``."""
    bad = []
    for cur, nxt in zip(trace[:-1], trace[1:]):
        L, D, g = cur.L_k, cur.Delta_k, cur.grad_tilde_norm
        a, b = D * D / (2.0 * L), g * g / (4.0 * L)
        if nxt.f_exact - cur.f_exact > a - b + _tol(cur.f_exact, nxt.f_exact, a, b):
            bad.append(cur.k)
    return bad


def eq9_violations(trace, Delta: float, delta_f: float) -> list[int]:
    """Rows violating the adaptive-L acceptance test.

    Uses the recorded inexact values when present. Rows read back from CSV
    only carry exact values, which satisfy the test with ``4 delta_f`` in
    place of ``2 delta_f``.
    """
    bad = []
    for cur, nxt in zip(trace[:-1], trace[1:]):
        L, g = cur.L_k, cur.grad_tilde_norm
        if math.isnan(cur.f_tilde) or math.isnan(nxt.f_tilde):
            f0, f1, slack = cur.f_exact, nxt.f_exact, 4.0 * delta_f
        else:
            f0, f1, slack = cur.f_tilde, nxt.f_tilde, 2.0 * delta_f
        # <g, s> + L||s||^2 with s = -g/(2L)
        a, b = g * g / (4.0 * L), Delta * Delta / (2.0 * L)
        if f1 > f0 - a + b + slack + _tol(f0, f1, a, b, slack):
            bad.append(cur.k)
    return bad


def _row_check(name, bad, note="") -> Check:
    return Check(name, 0.0, float(len(bad)), not bad, tuple(bad), note)


def _iteration_check(name, n_star, N, note="") -> Check:
    # N* = 0 means the initial gap is already below the noise floor; the
    # bound then says nothing about when the gradient test fires
    if n_star == 0:
        return Check(name, 0.0, float(N), True, note="vacuous: N* clamped at 0")
    return Check(name, float(n_star), float(N), N <= n_star, note=note)


def guarantee_inputs(problem, config, Delta: float) -> GuaranteeInputs:
    """Inputs built from the problem's validated constants."""
    if problem.f_star is None:
        raise ValueError("problem has no f_star or reference value")
    return GuaranteeInputs(
        L=problem.lipschitz_L_valid, mu=problem.pl_mu_valid,
        f0_gap=max(problem.f(problem.x0) - problem.f_star, 0.0), Delta=Delta,
        Delta_min=config.Delta_min, L_min=config.L_min, delta_f=config.delta_f,
        L_0=config.L_0)


def verify_run(result: RunResult, problem, inputs: GuaranteeInputs) -> GuaranteeReport:
    """Audit a finished run against every bound that applies to its method.

    Each bound is reported in its nominal form and, where the observed
    maxima of ``L_k`` / ``Delta_k`` may be substituted, in that form too.
    Row-level audits list the offending trace rows.
    """
    trace = result.trace
    if not trace:
        raise ValueError("empty trace")
    method = Method(result.method)
    if method is Method.ADAPTIVE_L_DELTA and any(r.Delta_k <= 0 for r in trace):
        raise ValueError("trace has no noise estimates; not an adaptive-(L, Delta) run")

    N = len(trace) - 1
    c = result.config.stop_multiplier
    mu = inputs.mu
    by_criterion = result.stop_reason is StopReason.GRADIENT_CRITERION
    last = trace[-1]
    gap_hat = None
    if problem.f_star is not None:
        gap_hat = last.f_exact - problem.f_star
    x_hat = result.x_hat if result.x_hat is not None else last.x
    dist = None
    if x_hat is not None:
        dist = float(np.linalg.norm(np.asarray(x_hat) - problem.x0))

    report = GuaranteeReport(method=method.value)
    report.hypothesis_violations = inputs.hypothesis_violations()
    checks = report.checks

    counts_ok = (last.n_func_calls_cum == result.n_func_calls
                 and last.n_grad_calls_cum == result.n_grad_calls)
    checks.append(Check("oracle_counters", float(result.n_grad_calls),
                        float(last.n_grad_calls_cum), counts_ok,
                        note="final cumulative counts equal the oracle counters"))
    abs_tol = result.config.abs_tol

    def acc(D):
        # stopping at ||g|| <= tau gives gap <= (tau^2 + Delta^2) / mu; tau = 2 Delta is the
        # nominal rule, and an absolute tolerance can only raise tau
        tau = max(max(c, 2.0) * D, abs_tol)
        return (tau * tau + D * D) / mu

    if method in (Method.CONSTANT_STEP, Method.ADAPTIVE_L):
        D = inputs.Delta
        if method is Method.ADAPTIVE_L:
            report.N_star_alg1 = n_star_alg1(inputs) if D > 0 else None
            report.gamma = inputs.L / inputs.L_min
            report.distance_bound_alg1 = distance_bound_alg1(inputs)
            checks.append(_row_check(
                "eq9_rows", eq9_violations(trace, result.delta_known or 0.0,
                                           result.config.delta_f)))
            if report.N_star_alg1 is not None and by_criterion:
                checks.append(_iteration_check("iterations_alg1", report.N_star_alg1, N))
            if dist is not None:
                checks.append(Check("distance_alg1", report.distance_bound_alg1, dist,
                                    dist <= report.distance_bound_alg1))
            L_obs = max(r.L_k for r in trace)
            fb = func_eval_bound_alg1(N, L_obs, result.config.L_0) + 2.0
            checks.append(Check("func_calls_alg1", fb, float(result.n_func_calls),
                                result.n_func_calls <= fb,
                                note="2N + log2(2 max L_k / L_0) + 2"))
        report.accuracy_bound = acc(D)
        if gap_hat is not None and by_criterion:
            checks.append(Check("accuracy", report.accuracy_bound, gap_hat,
                                gap_hat <= report.accuracy_bound * (1 + ROW_RTOL)))
        return report

    # adaptive (L, Delta)
    L_max, Delta_max = envelopes(inputs)
    report.L_max, report.Delta_max = L_max, Delta_max
    report.gamma = 4.0 * L_max / mu
    obs_L = max(r.L_k for r in trace[:-1]) if N > 0 else last.L_k
    obs_D = result.delta_max_observed
    report.accuracy_bound = acc(obs_D)
    report.distance_bound_alg2 = distance_bound_alg2(inputs)

    checks.append(_row_check("eq15_rows", eq15_violations(trace)))
    deltas = [r.Delta_k for r in trace]
    mono = [trace[i].k for i in range(1, len(deltas)) if deltas[i] < deltas[i - 1]]
    checks.append(_row_check("delta_nondecreasing", mono))
    floors = [r.k for r in trace
              if r.Delta_k < result.config.Delta_min or r.L_k < result.config.L_min]
    checks.append(_row_check("parameter_floors", floors))

    env_D = max(2.0 * Delta_max, result.config.Delta_min)
    checks.append(Check("delta_envelope", env_D, obs_D, obs_D <= env_D,
                        note="max Delta_k <= 2 Delta_max"))
    env_L = 4.0 * L_max
    checks.append(Check("L_envelope", env_L, obs_L, obs_L <= env_L,
                        note="max L_k <= 2 (2 L_max)"))

    if inputs.Delta > 0:
        report.N_star_alg2 = n_star_alg2(inputs)
        report.func_eval_bound_alg2 = func_eval_bound_alg2(inputs, report.N_star_alg2)
        if by_criterion:
            checks.append(_iteration_check("iterations_alg2", report.N_star_alg2, N))
            n_obs = n_star_alg2(inputs, L_max=obs_L)
            checks.append(_iteration_check("iterations_alg2_observed_L", n_obs, N,
                                           "max L_k substituted for L_max"))
        if report.N_star_alg2 > 0:
            checks.append(Check("func_calls_alg2", report.func_eval_bound_alg2,
                                float(result.n_func_calls),
                                result.n_func_calls <= report.func_eval_bound_alg2))
    per_iter = (N + 1) * math.log2(
        4.0 * inputs.L / inputs.L_min
        * max(inputs.L / inputs.L_min, inputs.Delta / inputs.Delta_min, 1.0)) + 1.0
    checks.append(Check("func_calls_alg2_per_iteration", per_iter, float(result.n_func_calls),
                        result.n_func_calls <= per_iter,
                        note="observed N + 1 iterations in place of N*"))

    if gap_hat is not None and by_criterion:
        checks.append(Check("accuracy", report.accuracy_bound, gap_hat,
                            gap_hat <= report.accuracy_bound * (1 + ROW_RTOL),
                            note="(c^2 + 1) max Delta_j^2 / mu; 5 max Delta_j^2 / mu at c <= 2"))
        nominal = acc(Delta_max)
        checks.append(Check("accuracy_envelope", nominal, gap_hat, gap_hat <= nominal))
    if dist is not None:
        checks.append(Check("distance_alg2", report.distance_bound_alg2, dist,
                            dist <= report.distance_bound_alg2))
        d_obs = distance_bound_alg2(inputs, L_max=obs_L)
        checks.append(Check("distance_alg2_observed_L", d_obs, dist, dist <= d_obs,
                            note="max L_k substituted for L_max"))
    return report
