import math

import numpy as np
import pytest

from pladapt.exceptions import EstimationError
from pladapt.noise_oracle import make_rng, sample_unit_sphere
from pladapt.problems import (QuadraticProblem, estimate_pl_mu, finite_difference_grad,
                              from_text, make_logistic, make_problem, make_quadratic,
                              make_trig_system, sample_smoothness, spectral_constants,
                              to_text)


@pytest.fixture(scope="module")
def logistic_small():
    return make_logistic(20, 60, seed=0)


@pytest.fixture(scope="module")
def trig_small():
    return make_trig_system(32, 4, seed=0)


def _region_points(problem, count, seed):
    rng = make_rng(seed)
    center = problem.x_star
    radius = np.linalg.norm(problem.x0 - center)
    for _ in range(count):
        yield center + radius * rng.uniform() * sample_unit_sphere(problem.dim, rng)


class TestQuadratic:
    def test_start_distance(self):
        prob = make_quadratic(100, 0.01, 1.0, zero_count=10, seed=0)
        assert prob.solution_distance(prob.x0) == pytest.approx(math.sqrt(90) * 100, rel=1e-15)
        assert round(prob.solution_distance(prob.x0), 1) == 948.7

    def test_one_dimensional(self):
        prob = make_quadratic(1, 1.0, 1.0, seed=0)
        assert prob.f(np.array([3.0])) == 9.0
        assert np.array_equal(prob.grad(np.array([3.0])), np.array([6.0]))

    def test_spectrum(self):
        prob = make_quadratic(50, 0.05, 2.0, zero_count=7, seed=4)
        nz = prob.diag[prob.diag > 0]
        assert prob.n_zero == 7
        assert nz.min() == 0.05 and nz.max() == 2.0
        assert (prob.lipschitz_L, prob.pl_mu, prob.f_star) == (2.0, 0.05, 0.0)

    def test_pl_ratio_factor_two(self):
        prob = make_quadratic(100, 0.1, 1.0, seed=1)
        rng = np.random.default_rng(5)
        for _ in range(1000):
            x = rng.normal(size=100) * 10
            g = prob.grad(x)
            # ||grad||^2 = sum 4 d^2 x^2 >= 4 min(d) f
            assert g @ g >= 4 * 0.1 * prob.f(x) * (1 - 1e-12)

    @pytest.mark.parametrize("kw", [dict(n=5, mu=2.0, L=1.0), dict(n=5, mu=0.1, L=1.0, zero_count=5),
                                    dict(n=0, mu=0.1, L=1.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            make_quadratic(**kw)

    def test_deterministic(self):
        a = make_quadratic(30, 0.1, 1.0, 3, seed=8)
        b = make_quadratic(30, 0.1, 1.0, 3, seed=8)
        assert np.array_equal(a.diag, b.diag)

    def test_pl_mu_above_L_rejected(self):
        with pytest.raises(ValueError):
            QuadraticProblem(dim=1, diag=[1.0], lipschitz_L=1.0, pl_mu=2.0,
                             f_star=0.0, x0=[1.0])


class TestLogistic:
    def test_value_at_origin(self, logistic_small):
        assert logistic_small.f(np.zeros(20)) == pytest.approx(math.log(2), rel=1e-15)

    def test_finite_minimizer(self, logistic_small):
        p = logistic_small
        assert np.linalg.norm(p.grad(p.x_star)) <= 1e-6
        assert np.linalg.eigvalsh(p.hessian(p.x_star))[0] > 0
        assert not p.f_star_exact

    def test_gradient_fd(self, logistic_small):
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = rng.normal(size=20)
            fd = finite_difference_grad(logistic_small.f, x)
            g = logistic_small.grad(x)
            assert np.linalg.norm(fd - g) <= 1e-6 * max(np.linalg.norm(g), 1e-12)

    def test_overflow_safe(self, logistic_small):
        x = 1e6 * np.ones(20)
        assert np.isfinite(logistic_small.f(x))
        assert np.all(np.isfinite(logistic_small.grad(x)))

    def test_full_size_shape(self):
        p = make_logistic(200, 700, seed=0)
        assert p.features.shape == (700, 200) and p.labels.shape == (700,)
        assert set(np.unique(p.labels)) == {-1.0, 1.0}
        assert 0 < p.pl_mu_valid <= p.pl_mu <= p.lipschitz_L

    def test_constants_valid_on_region(self, logistic_small):
        p = logistic_small
        for x in _region_points(p, 300, 77):
            g = p.grad(x)
            assert p.f(x) - p.f_star <= g @ g / (2 * p.pl_mu_valid) * (1 + 1e-9) + 1e-12
        assert sample_smoothness(p, 500, seed=5) <= p.lipschitz_L_valid * (1 + 1e-9)

    def test_small_m_rejected(self):
        with pytest.raises(ValueError):
            make_logistic(3, 1)


class TestTrig:
    def test_planted_root(self, trig_small):
        p = trig_small
        assert p.f(p.planted_solution) <= 1e-18 * p.m
        assert np.linalg.norm(p.grad(p.planted_solution)) <= 1e-8

    def test_orthogonality(self, trig_small):
        assert np.abs(trig_small.A @ trig_small.B.T).max() <= 1e-10
        assert np.abs(trig_small.B @ trig_small.A.T).max() <= 1e-10

    def test_gradient_fd_full_size(self):
        p = make_trig_system(256, 8, seed=0)
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = rng.uniform(-np.pi, np.pi, 256)
            fd = finite_difference_grad(p.f, x)
            g = p.grad(x)
            assert np.linalg.norm(fd - g) <= 1e-6 * np.linalg.norm(g)

    def test_jacobian_matches_fd(self, trig_small):
        x = np.linspace(-1, 1, 32)
        J = trig_small.jacobian(x)
        for i in range(trig_small.m):
            fd = finite_difference_grad(lambda z: trig_small.residual(z)[i], x)
            assert np.allclose(J[i], fd, atol=1e-8)

    def test_nominal_constants(self, trig_small):
        p = trig_small
        sigma = np.linalg.svd(np.hstack([p.A, p.B]), compute_uv=False)[0]
        assert p.lipschitz_L == pytest.approx(8 * math.sqrt(2) * sigma**2, rel=1e-12)
        lam = min(np.linalg.eigvalsh(p.A @ p.A.T)[0], np.linalg.eigvalsh(p.B @ p.B.T)[0])
        assert p.pl_mu == pytest.approx(lam, rel=1e-8)
        assert np.array_equal(p.x0, np.ones(32))

    def test_valid_constants_on_region(self, trig_small):
        p = trig_small
        for x in _region_points(p, 1000, 99):
            g = p.grad(x)
            assert p.f(x) <= g @ g / (2 * p.pl_mu_valid) * (1 + 1e-9) + 1e-15
        assert sample_smoothness(p, 1000, seed=123) <= p.lipschitz_L_valid

    def test_too_many_equations(self):
        with pytest.raises(ValueError):
            make_trig_system(6, 4)


class TestSpectral:
    def test_identity(self):
        assert spectral_constants(np.eye(3)) == pytest.approx((1.0, 1.0))

    def test_diag(self):
        assert spectral_constants(np.diag([3.0, 2.0])) == pytest.approx((3.0, 4.0))

    def test_random_against_eig(self):
        M = np.random.default_rng(0).normal(size=(8, 32))
        s, lam = spectral_constants(M)
        ev = np.linalg.eigvalsh(M @ M.T)
        assert s == pytest.approx(math.sqrt(ev[-1]), rel=1e-8)
        assert lam == pytest.approx(ev[0], rel=1e-8)

    @pytest.mark.parametrize("M", [np.zeros((0, 3)), np.array([[1.0, np.nan]])])
    def test_invalid(self, M):
        with pytest.raises(ValueError):
            spectral_constants(M)


class TestEstimatePL:
    def test_scalar_quadratic(self):
        p = make_quadratic(1, 1.0, 1.0)
        assert estimate_pl_mu(p, 200, seed=0) == pytest.approx(2.0, rel=1e-12)

    def test_quadratic_range(self):
        p = make_quadratic(100, 0.1, 1.0, seed=0)
        est = estimate_pl_mu(p, 1000, seed=0)
        assert 0.2 * (1 - 1e-12) <= est <= 2.0

    def test_trig_finite(self, trig_small):
        est = estimate_pl_mu(trig_small, 200, seed=1)
        assert 0 <= est < np.inf

    def test_no_valid_samples(self):
        p = make_quadratic(2, 1.0, 1.0)
        p = QuadraticProblem(dim=2, diag=p.diag, lipschitz_L=1.0, pl_mu=1.0, f_star=0.0,
                             x0=np.zeros(2), x_star=np.zeros(2))
        # x0 == x_star collapses the region onto the unit ball; force zero gaps
        p0 = QuadraticProblem(dim=2, diag=[0.0, 0.0], lipschitz_L=1.0, pl_mu=1.0,
                              f_star=0.0, x0=np.zeros(2), x_star=np.zeros(2))
        assert estimate_pl_mu(p, 10) > 0
        with pytest.raises(EstimationError):
            estimate_pl_mu(p0, 10)


class TestGradientsAllFamilies:
    @pytest.mark.parametrize("family,params", [
        ("quadratic", dict(n=30, mu=0.1, L=1.0, zero_count=3)),
        ("logistic", dict(n=20, m=60)),
        ("trig_system", dict(n=32, m=4)),
    ])
    def test_fd(self, family, params):
        p = make_problem(family, seed=3, **params)
        rng = np.random.default_rng(7)
        for _ in range(20):
            x = rng.uniform(-2, 2, p.dim)
            g = p.grad(x)
            fd = finite_difference_grad(p.f, x)
            assert np.linalg.norm(fd - g) <= 1e-5 * np.linalg.norm(g)


class TestSerialization:
    @pytest.mark.parametrize("family,params", [
        ("quadratic", dict(n=12, mu=0.1, L=1.0, zero_count=2)),
        ("logistic", dict(n=6, m=20)),
        ("trig_system", dict(n=10, m=3)),
    ])
    def test_round_trip(self, family, params):
        p = make_problem(family, seed=1, **params)
        q = from_text(to_text(p))
        assert type(q) is type(p)
        for name, arr in p.arrays().items():
            assert np.array_equal(arr, q.arrays()[name])
        for attr in ("lipschitz_L", "pl_mu", "lipschitz_L_valid", "pl_mu_valid", "f_star"):
            assert getattr(q, attr) == getattr(p, attr)
        x = np.linspace(-1, 1, p.dim)
        assert q.f(x) == p.f(x)
        assert to_text(q) == to_text(p)

    def test_wrong_format(self):
        with pytest.raises(ValueError):
            from_text('format = "other"\n')
