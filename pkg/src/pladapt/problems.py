"""Benchmark objectives: separable quadratic, logistic regression, and a
trigonometric system of nonlinear equations.

Every problem carries two sets of constants. ``lipschitz_L`` / ``pl_mu`` are
the nominal values used to configure the solvers (for the quadratic these
follow the ``L = max d_i`` convention). ``lipschitz_L_valid`` /
``pl_mu_valid`` are constants for which the smoothness and PL inequalities
actually hold, either in closed form or confirmed by sampling; guarantee
checks use the latter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np
import scipy.optimize
from scipy.special import expit

from . import _toml
from .exceptions import EstimationError
from .noise_oracle import make_rng, sample_unit_sphere

FORMAT_TAG = "pladapt-problem/1"


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False, kw_only=True)
class ProblemInstance:
    """Smooth objective with known (or estimated) constants.

    Subclasses implement :meth:`f` and :meth:`grad`. Instances are immutable
    and safe to share between threads.
    """

    family: ClassVar[str] = ""

    dim: int
    lipschitz_L: float
    pl_mu: float
    f_star: float | None
    x0: np.ndarray
    x_star: np.ndarray | None = None
    f_star_exact: bool = True
    lipschitz_L_valid: float | None = None
    pl_mu_valid: float | None = None
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "x0", _frozen(self.x0))
        if self.x_star is not None:
            object.__setattr__(self, "x_star", _frozen(self.x_star))
        if self.lipschitz_L_valid is None:
            object.__setattr__(self, "lipschitz_L_valid", float(self.lipschitz_L))
        if self.pl_mu_valid is None:
            object.__setattr__(self, "pl_mu_valid", float(self.pl_mu))
        if self.pl_mu > self.lipschitz_L:
            raise ValueError(
                f"pl_mu={self.pl_mu} exceeds lipschitz_L={self.lipschitz_L}")

    def f(self, x) -> float:
        raise NotImplementedError

    def grad(self, x) -> np.ndarray:
        raise NotImplementedError

    def solution_distance(self, x) -> float | None:
        """Distance to the nearest minimizer, when the solution set is known."""
        return None

    # serialization hooks
    def params(self) -> dict:
        return {"n": self.dim}

    def arrays(self) -> dict:
        return {}


@dataclass(frozen=True, eq=False, kw_only=True)
class QuadraticProblem(ProblemInstance):
    """``f(x) = sum_i d_i x_i**2`` with some ``d_i`` possibly zero."""

    family: ClassVar[str] = "quadratic"
    diag: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "diag", _frozen(self.diag))
        super().__post_init__()

    @property
    def n_zero(self) -> int:
        return int(np.count_nonzero(self.diag == 0.0))

    def f(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.dot(self.diag, x * x))

    def grad(self, x) -> np.ndarray:
        return 2.0 * self.diag * np.asarray(x, dtype=float)

    def solution_distance(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.linalg.norm(x[self.diag > 0.0]))

    def params(self) -> dict:
        return {"n": self.dim, "mu": self.pl_mu, "L": self.lipschitz_L,
                "zero_count": self.n_zero}

    def arrays(self) -> dict:
        return {"diag": self.diag}


@dataclass(frozen=True, eq=False, kw_only=True)
class LogisticProblem(ProblemInstance):
    """Mean logistic loss ``(1/m) sum log(1 + exp(-y_i <w_i, x>))``."""

    family: ClassVar[str] = "logistic"
    features: np.ndarray = field(default=None)
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen(self.features))
        object.__setattr__(self, "labels", _frozen(self.labels))
        super().__post_init__()

    @property
    def m(self) -> int:
        return self.features.shape[0]

    def f(self, x) -> float:
        margins = self.labels * (self.features @ np.asarray(x, dtype=float))
        return float(np.mean(np.logaddexp(0.0, -margins)))

    def grad(self, x) -> np.ndarray:
        margins = self.labels * (self.features @ np.asarray(x, dtype=float))
        weights = -self.labels * expit(-margins)
        return self.features.T @ weights / self.m

    def hessian(self, x) -> np.ndarray:
        z = self.features @ np.asarray(x, dtype=float)
        s = expit(z)
        return (self.features.T * (s * (1.0 - s))) @ self.features / self.m

    def params(self) -> dict:
        return {"n": self.dim, "m": self.m}

    def arrays(self) -> dict:
        return {"features": self.features, "labels": self.labels,
                "x_star": self.x_star}


@dataclass(frozen=True, eq=False, kw_only=True)
class TrigSystemProblem(ProblemInstance):
    """Least-squares residual of ``A sin(x) + B cos(x) = E``."""

    family: ClassVar[str] = "trig_system"
    A: np.ndarray = field(default=None)
    B: np.ndarray = field(default=None)
    E: np.ndarray = field(default=None)

    def __post_init__(self):
        for name in ("A", "B", "E"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        super().__post_init__()

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def planted_solution(self) -> np.ndarray:
        return self.x_star

    def residual(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.A @ np.sin(x) + self.B @ np.cos(x) - self.E

    def jacobian(self, x) -> np.ndarray:
        # d/dx_j [A_ij sin x_j + B_ij cos x_j] = A_ij cos x_j - B_ij sin x_j
        x = np.asarray(x, dtype=float)
        return self.A * np.cos(x) - self.B * np.sin(x)

    def f(self, x) -> float:
        r = self.residual(x)
        return float(np.dot(r, r))

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r = self.residual(x)
        return 2.0 * (np.cos(x) * (self.A.T @ r) - np.sin(x) * (self.B.T @ r))

    def params(self) -> dict:
        return {"n": self.dim, "m": self.m}

    def arrays(self) -> dict:
        return {"A": self.A, "B": self.B, "E": self.E, "x_star": self.x_star}


# ---------------------------------------------------------------------------
# constants

def spectral_constants(M) -> tuple[float, float]:
    """Largest singular value of ``M`` and smallest eigenvalue of ``M M^T``.

    Uses a full SVD, which is exact to working precision at the sizes used
    here. When ``M`` has more rows than columns, ``M M^T`` is singular and
    the second value is 0.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        raise ValueError("matrix is empty")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    s = np.linalg.svd(M, compute_uv=False)
    sigma_max = float(s[0])
    if M.shape[0] > M.shape[1]:
        return sigma_max, 0.0
    return sigma_max, float(s[-1] ** 2)


def _region_samples(problem: ProblemInstance, n_samples: int, rng):
    """Points in the ball around the (reference) minimizer reaching x0."""
    center = problem.x_star if problem.x_star is not None else problem.x0
    radius = float(np.linalg.norm(problem.x0 - center)) or 1.0
    for _ in range(n_samples):
        rho = rng.uniform(0.0, 1.0)
        yield center + radius * rho * sample_unit_sphere(problem.dim, rng)


def estimate_pl_mu(problem: ProblemInstance, n_samples: int = 1000, seed: int = 0) -> float:
    """Smallest PL ratio ``||grad f||^2 / (2 (f - f*))`` over sampled points.

    Points are drawn in the ball centred at the (reference) minimizer with
    radius ``||x0 - x_star||``. Samples whose gap is below ``1e-12`` are
    skipped. The result upper-bounds the largest PL constant valid on the
    sample.
    """
    if problem.f_star is None:
        raise ValueError("estimate_pl_mu needs f_star or a reference value")
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    rng = make_rng(seed)
    best = np.inf
    for x in _region_samples(problem, n_samples, rng):
        gap = problem.f(x) - problem.f_star
        if gap > 1e-12:
            g = problem.grad(x)
            best = min(best, float(np.dot(g, g)) / (2.0 * gap))
    if not np.isfinite(best):
        raise EstimationError("no sample point had a positive optimality gap")
    return best


def sample_smoothness(problem: ProblemInstance, n_pairs: int = 1000, seed: int = 0) -> float:
    """Largest observed ``||grad f(x) - grad f(y)|| / ||x - y||`` over pairs."""
    rng = make_rng(seed)
    center = problem.x_star if problem.x_star is not None else problem.x0
    radius = float(np.linalg.norm(problem.x0 - center)) or 1.0
    best = 0.0
    for x in _region_samples(problem, n_pairs, rng):
        scale = radius * 10.0 ** rng.uniform(-4.0, 0.0)
        y = x + scale * sample_unit_sphere(problem.dim, rng)
        dist = float(np.linalg.norm(x - y))
        if dist > 0.0:
            best = max(best, float(np.linalg.norm(problem.grad(x) - problem.grad(y))) / dist)
    return best


def finite_difference_grad(f, x, step=None) -> np.ndarray:
    """Central-difference gradient, step ``1e-5 * (1 + ||x||)`` by default."""
    x = np.asarray(x, dtype=float)
    h = 1e-5 * (1.0 + np.linalg.norm(x)) if step is None else step
    g = np.empty_like(x)
    e = np.zeros_like(x)
    for i in range(x.size):
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
        e[i] = 0.0
    return g


# ---------------------------------------------------------------------------
# constructors

def make_quadratic(n: int, mu: float, L: float, zero_count: int = 0,
                   seed: int = 0) -> QuadraticProblem:
    """Separable quadratic with spectrum in ``{0} U [mu, L]``.

    ``zero_count`` coefficients are zero, one equals ``mu``, one equals
    ``L``, and the rest are log-uniform in ``[mu, L]``. The start point is
    ``(100, ..., 100)``.
    """
    n, zero_count = int(n), int(zero_count)
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if not 0 <= zero_count < n:
        raise ValueError(f"zero_count must lie in [0, n), got {zero_count}")
    if not 0 < mu <= L:
        raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    n_active = n - zero_count
    if n_active == 1 and mu != L:
        raise ValueError("a single nonzero coefficient requires mu == L")

    rng = make_rng(seed)
    active = np.exp(rng.uniform(np.log(mu), np.log(L), size=n_active))
    active[0] = mu
    active[-1] = L
    diag = np.concatenate([active, np.zeros(zero_count)])
    diag = diag[rng.permutation(n)]

    return QuadraticProblem(
        dim=n, diag=diag, lipschitz_L=float(L), pl_mu=float(mu), f_star=0.0,
        x0=np.full(n, 100.0), x_star=np.zeros(n),
        # f = sum d x^2 has Hessian 2 diag(d): smoothness 2 max d, PL 2 min d
        lipschitz_L_valid=2.0 * float(L), pl_mu_valid=2.0 * float(mu), seed=seed)


def _logistic_reference(problem: LogisticProblem) -> np.ndarray:
    res = scipy.optimize.minimize(
        problem.f, np.zeros(problem.dim), jac=problem.grad, hess=problem.hessian,
        method="trust-exact", options={"gtol": 1e-12, "maxiter": 1000})
    return res.x


def make_logistic(n: int, m: int, seed: int = 0, flip_fraction: float = 0.1,
                  max_draws: int = 50) -> LogisticProblem:
    """Synthetic logistic regression with a finite minimizer.

    Features are standard Gaussian, labels are the signs of a random
    separator with ``flip_fraction`` of them flipped. A draw is kept only if
    a trust-region Newton reference solve reaches ``||grad f|| <= 1e-6`` at
    a point where the Hessian is well conditioned (smallest eigenvalue at
    least ``1e-4 L``); otherwise the next draw from the same stream is
    tried. The minimizer and ``f_star`` are reference values
    (``f_star_exact=False``).

    ``pl_mu`` is the sampled PL ratio; ``pl_mu_valid`` additionally takes the
    smallest Hessian eigenvalue seen on the sampled region, a strong
    convexity constant there.
    """
    n, m = int(n), int(m)
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if m < 2:
        raise ValueError(f"m must be at least 2, got {m}")
    rng = make_rng(seed)
    for _ in range(max_draws):
        W = rng.standard_normal((m, n))
        truth = sample_unit_sphere(n, rng)
        y = np.where(W @ truth >= 0.0, 1.0, -1.0)
        n_flip = int(round(flip_fraction * m))
        y[rng.choice(m, size=n_flip, replace=False)] *= -1.0

        sigma_max, _ = spectral_constants(W)
        L = sigma_max**2 / (4.0 * m)
        draft = LogisticProblem(dim=n, features=W, labels=y, lipschitz_L=L, pl_mu=0.0,
                                f_star=None, x0=np.zeros(n))
        x_ref = _logistic_reference(draft)
        gnorm = float(np.linalg.norm(draft.grad(x_ref)))
        hess_min = float(np.linalg.eigvalsh(draft.hessian(x_ref))[0])
        if gnorm <= 1e-6 and hess_min >= 1e-4 * L:
            break
    else:
        raise EstimationError(
            f"no draw in {max_draws} attempts had a well-posed finite minimizer")

    with_ref = LogisticProblem(dim=n, features=W, labels=y, lipschitz_L=L, pl_mu=0.0,
                               f_star=draft.f(x_ref), f_star_exact=False,
                               x0=np.zeros(n), x_star=x_ref, seed=seed)
    mu = min(estimate_pl_mu(with_ref, 1000, seed), L)
    curvature = min(float(np.linalg.eigvalsh(with_ref.hessian(x))[0])
                    for x in _region_samples(with_ref, 200, make_rng(seed)))
    curvature = min(curvature, hess_min, float(np.linalg.eigvalsh(with_ref.hessian(with_ref.x0))[0]))
    return LogisticProblem(dim=n, features=W, labels=y, lipschitz_L=L, pl_mu=mu,
                           f_star=with_ref.f_star, f_star_exact=False,
                           x0=np.zeros(n), x_star=x_ref, seed=seed,
                           pl_mu_valid=max(min(mu, curvature), 0.0))


def make_trig_system(n: int, m: int, seed: int = 0,
                     scale_range: tuple[float, float] = (1e-2, 1.0)) -> TrigSystemProblem:
    """System ``A sin(x) + B cos(x) = E`` with ``A B^T = 0`` and a planted root.

    Rows of ``A`` and ``B`` are disjoint rows of a random orthogonal
    matrix, each rescaled by a log-uniform factor from ``scale_range``.
    The planted solution is uniform in ``[-pi, pi]^n`` and ``E`` is chosen
    so it solves the system exactly, hence ``f* = 0``.
    """
    n, m = int(n), int(m)
    if m < 1 or n < 1:
        raise ValueError("n and m must be positive")
    if 2 * m > n:
        raise ValueError(f"need 2m <= n for orthogonal rows, got n={n}, m={m}")
    rng = make_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    Q = Q * np.sign(np.diag(R))
    lo, hi = np.log10(scale_range[0]), np.log10(scale_range[1])
    a = 10.0 ** rng.uniform(lo, hi, size=m)
    b = 10.0 ** rng.uniform(lo, hi, size=m)
    A = a[:, None] * Q[:m]
    B = b[:, None] * Q[m:2 * m]
    planted = rng.uniform(-np.pi, np.pi, size=n)
    E = A @ np.sin(planted) + B @ np.cos(planted)
    return _trig_from_arrays(A, B, E, planted, seed)


def _trig_from_arrays(A, B, E, planted, seed, valid=None) -> TrigSystemProblem:
    n = A.shape[1]
    sigma_ab, _ = spectral_constants(np.hstack([A, B]))
    _, lam_a = spectral_constants(A)
    _, lam_b = spectral_constants(B)
    L = 8.0 * np.sqrt(2.0) * sigma_ab**2
    mu = min(lam_a, lam_b)
    draft = TrigSystemProblem(dim=n, A=A, B=B, E=E, lipschitz_L=L, pl_mu=mu,
                              f_star=0.0, x0=np.ones(n), x_star=planted, seed=seed)
    if valid is None:
        s = 0 if seed is None else seed
        valid = (max(L, sample_smoothness(draft, 1000, s)),
                 min(mu, estimate_pl_mu(draft, 1000, s)))
    return TrigSystemProblem(dim=n, A=A, B=B, E=E, lipschitz_L=L, pl_mu=mu,
                             f_star=0.0, x0=np.ones(n), x_star=planted, seed=seed,
                             lipschitz_L_valid=valid[0], pl_mu_valid=valid[1])


def make_problem(family: str, seed: int = 0, **params) -> ProblemInstance:
    if family == "quadratic":
        return make_quadratic(params["n"], params["mu"], params["L"],
                              params.get("zero_count", 0), seed)
    if family == "logistic":
        return make_logistic(params["n"], params["m"], seed)
    if family == "trig_system":
        return make_trig_system(params["n"], params["m"], seed)
    raise ValueError(f"unknown problem family {family!r}")


# ---------------------------------------------------------------------------
# serialization

def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype=float)
    return {"shape": list(a.shape), "data": [float(v).hex() for v in a.ravel()]}


def _decode_array(entry: dict) -> np.ndarray:
    data = np.array([float.fromhex(s) for s in entry["data"]], dtype=float)
    return data.reshape(entry["shape"])


def to_text(problem: ProblemInstance) -> str:
    """Serialize a problem to the flat key-value format.

    Matrices are stored row-major as hexadecimal float strings so the
    round trip is bit-exact.
    """
    doc = {
        "format": FORMAT_TAG,
        "family": problem.family,
        "seed": problem.seed if problem.seed is not None else 0,
        "params": problem.params(),
        "constants": {
            "lipschitz_L": problem.lipschitz_L,
            "pl_mu": problem.pl_mu,
            "lipschitz_L_valid": problem.lipschitz_L_valid,
            "pl_mu_valid": problem.pl_mu_valid,
            "f_star": problem.f_star,
            "f_star_exact": problem.f_star_exact,
        },
        "arrays": {name: _encode_array(a) for name, a in problem.arrays().items()
                   if a is not None},
    }
    return _toml.dumps(doc)


def from_text(text: str) -> ProblemInstance:
    doc = _toml.loads(text)
    if doc.get("format") != FORMAT_TAG:
        raise ValueError(f"not a serialized problem (format={doc.get('format')!r})")
    family = doc["family"]
    seed = doc.get("seed")
    c = doc["constants"]
    arrays = {name: _decode_array(e) for name, e in doc.get("arrays", {}).items()}
    if family == "quadratic":
        diag = arrays["diag"]
        n = diag.size
        return QuadraticProblem(
            dim=n, diag=diag, lipschitz_L=c["lipschitz_L"], pl_mu=c["pl_mu"],
            f_star=c["f_star"], x0=np.full(n, 100.0), x_star=np.zeros(n),
            lipschitz_L_valid=c["lipschitz_L_valid"], pl_mu_valid=c["pl_mu_valid"],
            seed=seed)
    if family == "logistic":
        W = arrays["features"]
        return LogisticProblem(
            dim=W.shape[1], features=W, labels=arrays["labels"],
            lipschitz_L=c["lipschitz_L"], pl_mu=c["pl_mu"], f_star=c.get("f_star"),
            f_star_exact=c.get("f_star_exact", False), x0=np.zeros(W.shape[1]),
            x_star=arrays.get("x_star"), lipschitz_L_valid=c["lipschitz_L_valid"],
            pl_mu_valid=c["pl_mu_valid"], seed=seed)
    if family == "trig_system":
        return _trig_from_arrays(arrays["A"], arrays["B"], arrays["E"], arrays["x_star"],
                                 seed, valid=(c["lipschitz_L_valid"], c["pl_mu_valid"]))
    raise ValueError(f"unknown problem family {family!r}")
