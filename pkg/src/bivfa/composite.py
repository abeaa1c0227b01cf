"""Composite objectives ``h = h1 + h2`` with oracle-query accounting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .prox import ProxOracle, combined_prox

__all__ = [
    "SmoothOracle",
    "CompositeObjective",
    "QueryCounter",
    "BilevelInstance",
    "evaluate",
    "make_least_squares",
    "make_quadratic_form",
    "make_zero_smooth",
    "power_iteration",
]


@dataclass(frozen=True)
class SmoothOracle:
    """A convex differentiable function given by value and gradient.

    ``lipschitz_hint`` bounds the Lipschitz constant of the gradient when
    known; ``strong_convexity`` is a (possibly zero) lower bound on the
    modulus of strong convexity.
    """

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    lipschitz_hint: float | None = None
    strong_convexity: float = 0.0


@dataclass(frozen=True)
class CompositeObjective:
    """``smooth(x) + nonsmooth(x)``; ``nonsmooth_lipschitz`` is ``l_{h2}`` if finite."""

    smooth: SmoothOracle
    nonsmooth: ProxOracle
    nonsmooth_lipschitz: float = 0.0

    def __call__(self, x) -> float:
        return evaluate(self, x)


@dataclass
class QueryCounter:
    """Counts oracle queries: gradients, proximal maps and function values."""

    gradient_evals: int = 0
    prox_evals: int = 0
    value_evals: int = 0

    @property
    def total(self) -> int:
        return self.gradient_evals + self.prox_evals + self.value_evals

    def snapshot(self) -> "QueryCounter":
        return QueryCounter(self.gradient_evals, self.prox_evals, self.value_evals)

    def add(self, other: "QueryCounter") -> None:
        self.gradient_evals += other.gradient_evals
        self.prox_evals += other.prox_evals
        self.value_evals += other.value_evals

    def __sub__(self, other: "QueryCounter") -> "QueryCounter":
        return QueryCounter(
            self.gradient_evals - other.gradient_evals,
            self.prox_evals - other.prox_evals,
            self.value_evals - other.value_evals,
        )

    def as_dict(self) -> dict:
        return {
            "gradient_evals": self.gradient_evals,
            "prox_evals": self.prox_evals,
            "value_evals": self.value_evals,
            "total": self.total,
        }


def evaluate(obj: CompositeObjective, x, counter: QueryCounter | None = None) -> float:
    """Value ``h1(x) + h2(x)``; ``+inf`` outside the domain of ``h2``."""
    x = np.asarray(x, dtype=float)
    if counter is not None:
        counter.value_evals += 1
    ns = obj.nonsmooth.value(x)
    if not np.isfinite(ns):
        return np.inf
    return float(obj.smooth.value(x)) + float(ns)


@dataclass(frozen=True)
class BilevelInstance:
    """``min upper(x)`` over ``argmin lower(x)`` in dimension ``n``.

    Parameters
    ----------
    upper, lower : CompositeObjective
        The objectives ``f = f1 + f2`` and ``g = g1 + g2``.
    n : int
        Common dimension.
    name : str
        Label used in reports.
    metadata : dict
        Free-form description (family, seed, dimensions, radii).
    """

    upper: CompositeObjective
    lower: CompositeObjective
    n: int
    name: str = "custom"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.n) < 1:
            raise ConfigurationError(f"dimension must be positive, got {self.n}")

    def combined_prox(self, y, t: float, z: float) -> np.ndarray:
        """Prox of ``t * (g2 + z f2)``."""
        return combined_prox(y, t, z, self.lower.nonsmooth, self.upper.nonsmooth)

    def f(self, x, counter: QueryCounter | None = None) -> float:
        return evaluate(self.upper, x, counter)

    def g(self, x, counter: QueryCounter | None = None) -> float:
        return evaluate(self.lower, x, counter)


def power_iteration(matvec: Callable[[np.ndarray], np.ndarray], n: int,
                    max_iter: int = 200, rtol: float = 1e-9) -> float:
    """Largest eigenvalue of a symmetric PSD operator by power iteration.

    Starts from the normalized all-ones vector; stops after ``max_iter``
    iterations or when the Rayleigh quotient changes by less than ``rtol``
    relatively. A second deterministic start is always run as well and the
    larger estimate is returned, because the all-ones vector is an exact
    eigenvector of common structured operators (e.g. ``L^T L + I`` for a
    difference matrix ``L``) and would otherwise report the wrong eigenvalue.
    """
    starts = [np.ones(n), np.cos(np.arange(1, n + 1) * 1.2345)]
    best = 0.0
    for v in starts:
        v = v / np.linalg.norm(v)
        lam = 0.0
        for _ in range(max_iter):
            w = matvec(v)
            lam_new = float(v @ w)
            nw = np.linalg.norm(w)
            if nw == 0:
                lam_new = 0.0
                break
            v = w / nw
            if abs(lam_new - lam) <= rtol * max(abs(lam_new), 1e-300):
                lam = lam_new
                break
            lam = lam_new
        best = max(best, lam)
    return best


def make_least_squares(A, b) -> SmoothOracle:
    """``0.5 * ||A x - b||^2`` with gradient ``A^T (A x - b)``.

    The Lipschitz hint is ``lambda_max(A^T A)`` from :func:`power_iteration`
    inflated by ``1e-6`` relative to cover the power-iteration error.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise ConfigurationError("A must have at least one row and one column")
    if b.shape[0] != A.shape[0]:
        raise ConfigurationError(f"b has length {b.shape[0]} but A has {A.shape[0]} rows")
    AtA = A.T @ A
    Atb = A.T @ b
    lam = power_iteration(lambda v: AtA @ v, A.shape[1])

    def value(x):
        r = A @ x - b
        return 0.5 * float(r @ r)

    def gradient(x):
        return AtA @ x - Atb

    return SmoothOracle(value, gradient, lipschitz_hint=lam * (1 + 1e-6))


def make_quadratic_form(Q) -> SmoothOracle:
    """``x^T Q x`` with gradient ``2 Q x`` for symmetric PSD ``Q``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape[0] != Q.shape[1]:
        raise ConfigurationError(f"Q must be square, got shape {Q.shape}")
    if not np.allclose(Q, Q.T, rtol=1e-12, atol=1e-12):
        raise ConfigurationError("Q must be symmetric")
    eigs = np.linalg.eigvalsh(Q)
    if eigs[0] < -1e-8:
        raise ConfigurationError(f"Q must be positive semidefinite (min eigenvalue {eigs[0]:.3e})")
    lam = power_iteration(lambda v: Q @ v, Q.shape[0])

    def value(x):
        return float(x @ (Q @ x))

    def gradient(x):
        return 2.0 * (Q @ x)

    return SmoothOracle(value, gradient, lipschitz_hint=2.0 * lam * (1 + 1e-6),
                        strong_convexity=2.0 * max(float(eigs[0]), 0.0))


def make_zero_smooth() -> SmoothOracle:
    """The smooth function identically zero."""
    return SmoothOracle(lambda x: 0.0, lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                        lipschitz_hint=0.0)
