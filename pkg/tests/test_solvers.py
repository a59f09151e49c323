import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pladapt.exceptions import NumericalDivergenceError
from pladapt.noise_oracle import InexactOracle, NoiseSpec
from pladapt.problems import QuadraticProblem, make_quadratic, make_trig_system
from pladapt.solvers import (SQRT6, Method, SolverConfig, StopReason, check_condition_alg1,
                             check_condition_alg2, minimal_delta_k, run_adaptive_L,
                             run_adaptive_L_delta, run_constant_step, run_method,
                             stopping_reached, trace_from_csv, trace_to_csv)
from pladapt.guarantees import eq9_violations, eq15_violations


def scalar_quadratic(x0):
    return QuadraticProblem(dim=1, diag=[1.0], lipschitz_L=2.0, pl_mu=2.0, f_star=0.0,
                            x0=[x0], x_star=[0.0])


@pytest.fixture(scope="module")
def table1_mu01():
    return make_quadratic(100, 0.01, 1.0, zero_count=10, seed=0)


class TestConfig:
    def test_defaults(self):
        cfg = SolverConfig(L_min=0.5)
        assert cfg.L_0 == 0.5 and cfg.Delta_0 == cfg.Delta_min == 1e-12
        assert cfg.stop_multiplier == SQRT6

    @pytest.mark.parametrize("kw", [dict(L_min=0.0), dict(L_min=1.0, L_0=0.5),
                                    dict(Delta_min=0.0), dict(Delta_min=1.0, Delta_0=0.1),
                                    dict(stop_multiplier=0.0), dict(delta_f=-1.0),
                                    dict(max_iterations=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SolverConfig(**kw)


class TestConditions:
    def test_alg1_boundary_equality(self):
        # f = x^2 at x = 1, g = 2, L = 1: x+ = 0, both sides equal 0
        assert check_condition_alg1(0.0, 1.0, np.array([2.0]), np.array([-1.0]), 1.0, 0.0, 0.0)

    def test_alg1_rejects_small_L(self):
        # L = 0.4: x+ = -1.5, f = 2.25 > 1 - 5 + 2.5 = -1.5
        assert not check_condition_alg1(2.25, 1.0, np.array([2.0]), np.array([-2.5]),
                                        0.4, 0.0, 0.0)

    @given(x=st.floats(-1e3, 1e3), L=st.floats(2.0, 1e3))
    def test_alg1_descent_lemma(self, x, L):
        # true smoothness of x**2 is 2
        g = np.array([2.0 * x])
        step = -g / (2 * L)
        assert check_condition_alg1((x + step[0]) ** 2, x * x, g, step, L, 0.0, 0.0)

    def test_minimal_delta_hand_value(self):
        d = minimal_delta_k(0.5, 1.0, np.array([2.0]), np.array([-0.5]), 1.0, 0.01, 0.0)
        assert d == pytest.approx(0.75, rel=1e-15)

    def test_minimal_delta_floors(self):
        # exact gradient with L above smoothness: raw value negative
        g = np.array([2.0])
        step = -g / (2 * 4.0)
        f_next = (1.0 + step[0]) ** 2
        assert minimal_delta_k(f_next, 1.0, g, step, 4.0, 1e-12, 0.0) == 1e-12
        assert minimal_delta_k(f_next, 1.0, g, step, 4.0, 1e-12, 0.3) == 0.3
        assert minimal_delta_k(f_next, 1.0, g, np.zeros(1), 4.0, 1e-3, 0.0) == 1e-3

    def test_minimal_delta_plug_back(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            n = rng.integers(1, 6)
            g = rng.normal(size=n) * 10.0 ** rng.uniform(-6, 3)
            L = 10.0 ** rng.uniform(-4, 4)
            step = -g / (2 * L)
            f_cur = rng.normal() * 10.0 ** rng.uniform(-3, 3)
            f_next = f_cur + rng.normal() * 10.0 ** rng.uniform(-8, 2)
            floor = abs(rng.normal()) * rng.integers(0, 2)
            d = minimal_delta_k(f_next, f_cur, g, step, L, 1e-12, floor)
            assert d >= max(1e-12, floor)
            assert check_condition_alg2(f_next, f_cur, g, step, L, d)

    @pytest.mark.parametrize("args,expected", [((0.2, 0.1, 2.0), True),
                                               ((0.25, 0.1, SQRT6), False),
                                               ((0.0, 0.0, 1.0), True)])
    def test_stopping(self, args, expected):
        assert stopping_reached(*args) is expected


class TestConstantStep:
    def test_halving_recursion(self):
        prob = scalar_quadratic(8.0)
        oracle = InexactOracle(prob)
        res = run_constant_step(oracle, 2.0, SolverConfig(abs_tol=1e-12))
        xs = [r.x[0] for r in res.trace[:5]]
        assert xs == [8.0, 4.0, 2.0, 1.0, 0.5]
        assert res.stop_reason is StopReason.GRADIENT_CRITERION

    def test_grad_calls_per_point(self, table1_mu01):
        oracle = InexactOracle(table1_mu01, NoiseSpec(delta=0.1, seed=0))
        res = run_constant_step(oracle, 1.0, SolverConfig(L_min=0.0025))
        # one gradient per visited point, including the output point
        assert res.n_grad_calls == res.n_iterations + 1
        assert res.n_func_calls == 0

    def test_table1_order(self, table1_mu01):
        its = [run_constant_step(InexactOracle(table1_mu01, NoiseSpec(delta=0.1, seed=s)),
                                 1.0, SolverConfig(L_min=0.0025)).n_iterations
               for s in range(10)]
        assert 50 <= np.median(its) <= 500

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self):
        prob = scalar_quadratic(1.0)
        oracle = InexactOracle(prob)
        with pytest.raises(NumericalDivergenceError) as info:
            run_constant_step(oracle, 1e-300, SolverConfig(max_iterations=100))
        assert info.value.result is not None

    def test_iteration_cap(self, table1_mu01):
        res = run_constant_step(InexactOracle(table1_mu01, NoiseSpec(delta=1e-7)),
                                1.0, SolverConfig(max_iterations=5))
        assert res.stop_reason is StopReason.ITERATION_CAP and res.n_iterations == 5


class TestAdaptiveL:
    def test_exact_oracle_descent(self, table1_mu01):
        oracle = InexactOracle(table1_mu01)
        res = run_adaptive_L(oracle, 0.0, SolverConfig(L_min=0.0025, abs_tol=1e-12))
        for cur, nxt in zip(res.trace[:-1], res.trace[1:]):
            g = np.linalg.norm(table1_mu01.grad(cur.x))
            assert nxt.f_exact <= cur.f_exact - g * g / (4 * cur.L_k) + 1e-12 * cur.f_exact

    def test_table1_order_and_calls(self, table1_mu01):
        cfg = SolverConfig(L_min=0.0025)
        its = []
        for s in range(10):
            res = run_adaptive_L(InexactOracle(table1_mu01, NoiseSpec(delta=0.1, seed=s)),
                                 0.1, cfg)
            its.append(res.n_iterations)
            L_obs = max(r.L_k for r in res.trace)
            assert res.n_func_calls <= 2 * res.n_iterations + math.log2(2 * L_obs / cfg.L_0) + 2
            assert res.n_grad_calls == res.n_iterations + 1
            assert eq9_violations(res.trace, 0.1, 0.0) == []
        assert 30 <= np.median(its) <= 300

    def test_backtrack_cap(self):
        prob = scalar_quadratic(1.0)
        res = run_adaptive_L(InexactOracle(prob), 0.0,
                             SolverConfig(L_min=1e-9, max_inner_backtracks=3))
        assert res.stop_reason is StopReason.BACKTRACK_CAP

    def test_with_value_noise(self):
        prob = make_quadratic(20, 0.05, 1.0, 2, seed=1)
        delta = 0.01
        delta_f = delta**2 / (32 * 2.0)
        oracle = InexactOracle(prob, NoiseSpec(delta=delta, delta_f=delta_f, seed=3))
        res = run_adaptive_L(oracle, delta, SolverConfig(L_min=0.0125, delta_f=delta_f))
        assert eq9_violations(res.trace, delta, delta_f) == []
        assert res.stop_reason is StopReason.GRADIENT_CRITERION


class TestAdaptiveLDelta:
    def test_exact_oracle_delta_at_floor(self, table1_mu01):
        res = run_adaptive_L_delta(InexactOracle(table1_mu01),
                                   SolverConfig(L_min=0.0025, Delta_min=1e-16, abs_tol=1e-12))
        assert res.stop_reason is StopReason.GRADIENT_CRITERION
        assert all(r.Delta_k == 1e-16 for r in res.trace)

    def test_exact_oracle_floor_rises_when_L_underestimates(self, table1_mu01):
        # near the end only flat directions carry gradient, L_k drops below the
        # true smoothness and Delta_k absorbs the overshoot; the relative stop
        # rule fires as soon as that happens
        res = run_adaptive_L_delta(InexactOracle(table1_mu01),
                                   SolverConfig(L_min=0.0025, Delta_min=1e-12, abs_tol=1e-12))
        assert res.stop_reason is StopReason.GRADIENT_CRITERION
        assert 1e-12 < res.delta_max_observed < 1e-8
        assert np.linalg.norm(table1_mu01.grad(res.x_hat)) < 1e-8

    def test_table1_order(self, table1_mu01):
        its = []
        for s in range(10):
            res = run_adaptive_L_delta(
                InexactOracle(table1_mu01, NoiseSpec(delta=0.1, seed=s)),
                SolverConfig(L_min=0.0025))
            its.append(res.n_iterations)
            assert eq15_violations(res.trace) == []
            deltas = [r.Delta_k for r in res.trace]
            assert all(a <= b for a, b in zip(deltas, deltas[1:]))
            assert all(r.L_k >= 0.0025 for r in res.trace)
        assert 50 <= np.median(its) <= 600

    def test_output_is_last_point(self, table1_mu01):
        res = run_adaptive_L_delta(InexactOracle(table1_mu01, NoiseSpec(delta=0.1, seed=1)),
                                   SolverConfig(L_min=0.0025))
        assert np.array_equal(res.x_hat, res.trace[-1].x)
        assert res.n_iterations == len(res.trace) - 1
        assert res.delta_max_observed == max(r.Delta_k for r in res.trace)

    def test_counters_match_trace(self):
        prob = make_trig_system(32, 4, seed=1)
        oracle = InexactOracle(prob, NoiseSpec(delta=1e-2, seed=2))
        res = run_adaptive_L_delta(oracle, SolverConfig(L_min=prob.pl_mu / 4))
        assert res.trace[-1].n_func_calls_cum == oracle.n_func_calls == res.n_func_calls
        assert res.trace[-1].n_grad_calls_cum == oracle.n_grad_calls == res.n_grad_calls


class TestDeterminismAndExport:
    @pytest.mark.parametrize("method", list(Method))
    def test_bit_identical(self, method, table1_mu01):
        cfg = SolverConfig(L_min=0.0025)
        a = run_method(method, InexactOracle(table1_mu01, NoiseSpec(delta=0.1, seed=4)), cfg)
        b = run_method(method, InexactOracle(table1_mu01, NoiseSpec(delta=0.1, seed=4)), cfg)
        assert trace_to_csv(a) == trace_to_csv(b)
        assert np.array_equal(a.x_hat, b.x_hat)

    def test_csv_round_trip(self, table1_mu01):
        res = run_adaptive_L_delta(InexactOracle(table1_mu01, NoiseSpec(delta=0.1, seed=0)),
                                   SolverConfig(L_min=0.0025))
        text = trace_to_csv(res)
        assert text.splitlines()[0] == "k,f,grad_tilde_norm,L_k,Delta_k,n_backtracks,func_calls,grad_calls"
        back = trace_from_csv(text)
        for r, s in zip(res.trace, back):
            assert (r.k, r.f_exact, r.grad_tilde_norm, r.L_k, r.Delta_k) == \
                (s.k, s.f_exact, s.grad_tilde_norm, s.L_k, s.Delta_k)

    def test_store_iterates_off(self, table1_mu01):
        res = run_constant_step(InexactOracle(table1_mu01, NoiseSpec(delta=0.1)), 1.0,
                                SolverConfig(store_iterates=False))
        assert res.trace[0].x is not None and res.trace[-1].x is not None
        assert all(r.x is None for r in res.trace[1:-1])

    def test_exact_oracle_all_methods(self):
        prob = make_quadratic(100, 0.01, 1.0, zero_count=10, seed=0)
        for method in Method:
            res = run_method(method, InexactOracle(prob),
                             SolverConfig(L_min=0.0025, Delta_min=1e-16, abs_tol=1e-12,
                                          max_iterations=10**5))
            assert np.linalg.norm(prob.grad(res.x_hat)) <= 1e-10
