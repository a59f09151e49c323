"""Inexact first-order oracle with controlled, reproducible noise.

The gradient oracle returns ``grad f(x) + delta * u`` with ``u`` drawn
uniformly from the unit sphere, so every call realizes the largest
perturbation allowed by ``||v(x)|| <= delta``. Function values are
perturbed by ``delta_f * s`` with ``s ~ U[-1, 1]``.

Randomness comes from numpy's PCG64 bit generator (a documented 128-bit
LCG with 64-bit XSL-RR output permutation), seeded with a 64-bit integer.
Noise is redrawn on every call; nothing is cached per point.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class NoiseMode(enum.Enum):
    SPHERE_WORST_CASE = "sphere"
    ZERO = "zero"


@dataclass(frozen=True)
class NoiseSpec:
    """Noise levels and seed for an :class:`InexactOracle`.

    Parameters
    ----------
    delta : float
        Gradient noise radius. Every perturbation has exactly this norm.
    delta_f : float
        Bound on the function-value perturbation.
    seed : int
        Seed for the PCG64 stream, in ``[0, 2**64)``.
    mode : NoiseMode
        ``ZERO`` disables both perturbations regardless of the levels.
    """

    delta: float = 0.0
    delta_f: float = 0.0
    seed: int = 0
    mode: NoiseMode = NoiseMode.SPHERE_WORST_CASE

    def __post_init__(self):
        if not (np.isfinite(self.delta) and self.delta >= 0):
            raise ValueError(f"delta must be finite and >= 0, got {self.delta!r}")
        if not (np.isfinite(self.delta_f) and self.delta_f >= 0):
            raise ValueError(f"delta_f must be finite and >= 0, got {self.delta_f!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        object.__setattr__(self, "mode", NoiseMode(self.mode))

    @property
    def gradient_noise(self) -> float:
        return 0.0 if self.mode is NoiseMode.ZERO else float(self.delta)

    @property
    def value_noise(self) -> float:
        return 0.0 if self.mode is NoiseMode.ZERO else float(self.delta_f)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def sample_unit_sphere(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a point uniformly from the unit sphere in ``R^dim``.

    A standard Gaussian vector is normalized; the (probability zero)
    all-zero draw is rejected and redrawn.
    """
    dim = int(dim)
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    while True:
        z = rng.standard_normal(dim)
        norm = np.linalg.norm(z)
        if norm > 0.0:
            return z / norm


@dataclass(eq=False)
class InexactOracle:
    """Noisy view of a problem with exact bookkeeping of oracle calls.

    The oracle owns its RNG and counters, so an instance must not be
    shared between concurrently running solvers. Build one oracle per run.

    Examples
    --------
    >>> from pladapt.problems import make_quadratic
    >>> prob = make_quadratic(3, mu=0.5, L=1.0, zero_count=0, seed=0)
    >>> oracle = InexactOracle(prob, NoiseSpec(delta=0.1, seed=1))
    >>> g = oracle.grad_tilde(np.zeros(3))
    >>> round(float(np.linalg.norm(g)), 12)
    0.1
    >>> oracle.n_grad_calls
    1
    """

    problem: object
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    n_grad_calls: int = 0
    n_func_calls: int = 0

    def __post_init__(self):
        self._rng = make_rng(self.noise.seed)

    @property
    def dim(self) -> int:
        return self.problem.dim

    def _check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.problem.dim,):
            raise ValueError(
                f"point has shape {x.shape}, expected ({self.problem.dim},)")
        return x

    def grad_tilde(self, x) -> np.ndarray:
        x = self._check_point(x)
        self.n_grad_calls += 1
        g = self.problem.grad(x)
        delta = self.noise.gradient_noise
        if delta == 0.0:
            return g
        return g + delta * sample_unit_sphere(self.problem.dim, self._rng)

    def f_tilde(self, x) -> float:
        x = self._check_point(x)
        self.n_func_calls += 1
        value = self.problem.f(x)
        delta_f = self.noise.value_noise
        if delta_f == 0.0:
            return value
        return value + delta_f * self._rng.uniform(-1.0, 1.0)

    def f_exact(self, x) -> float:
        """Exact function value; counted as a function call."""
        x = self._check_point(x)
        self.n_func_calls += 1
        return self.problem.f(x)

    def reset_counters(self):
        self.n_grad_calls = 0
        self.n_func_calls = 0
