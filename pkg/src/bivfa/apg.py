"""Accelerated proximal gradient subsolvers.

Two methods are provided:

* :func:`apg_strongly_convex` for ``phi1 + phi2`` with ``phi1`` strongly
  convex. Besides the accelerated sequence it performs one extra proximal
  step per iteration whose output carries an explicit subgradient, so the
  returned point comes with a certificate of near-stationarity.
* :func:`apg_convex`, FISTA with backtracking, for merely convex ``phi1``.

Both count every gradient, proximal and value query in a shared
:class:`~bivfa.composite.QueryCounter`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .composite import QueryCounter, SmoothOracle
from .errors import ConfigurationError, NumericalFailure
from .prox import ProxOracle, all_finite

__all__ = [
    "ApgStrongConfig",
    "ApgConvexConfig",
    "StationarityCertificate",
    "ConvexResult",
    "apg_strongly_convex",
    "apg_convex",
    "sufficient_decrease",
    "curvature_test",
    "MAX_BACKTRACKS",
]

MAX_BACKTRACKS = 60
_ROUNDOFF = 8 * np.finfo(float).eps


@dataclass(frozen=True)
class ApgStrongConfig:
    """Parameters of the strongly convex solver.

    Attributes
    ----------
    mu : float
        Strong convexity modulus of the smooth part.
    eps_stat : float
        Target on the norm of the returned subgradient.
    L_min : float
        Floor on the Lipschitz estimate.
    gamma1 : float
        Backtracking increase factor, ``> 1``.
    gamma2 : float
        Per-iteration decrease factor of the estimate, ``>= 1``.
    max_iters : int
        Iteration budget.
    """

    mu: float
    eps_stat: float
    L_min: float = 1e-6
    gamma1: float = 2.0
    gamma2: float = 2.0
    max_iters: int = 10**6

    def __post_init__(self):
        if not self.mu > 0:
            raise ConfigurationError(f"mu must be positive, got {self.mu}")
        if not self.eps_stat > 0:
            raise ConfigurationError(f"eps_stat must be positive, got {self.eps_stat}")
        if not self.L_min > 0:
            raise ConfigurationError(f"L_min must be positive, got {self.L_min}")
        if not self.gamma1 > 1:
            raise ConfigurationError(f"gamma1 must exceed 1, got {self.gamma1}")
        if not self.gamma2 >= 1:
            raise ConfigurationError(f"gamma2 must be at least 1, got {self.gamma2}")
        if int(self.max_iters) < 1:
            raise ConfigurationError("max_iters must be positive")


@dataclass(frozen=True)
class ApgConvexConfig:
    """Parameters of FISTA with backtracking.

    When ``R_bound`` (an upper bound on the distance from the start to a
    minimizer) is given, the method stops as soon as the worst-case
    objective bound ``2 eta L R^2 / (k+1)^2`` is below ``eps_obj``.
    Otherwise it stops on the residual test described in
    :func:`apg_convex`.
    """

    eps_obj: float
    L0: float = 1.0
    eta: float = 2.0
    R_bound: float | None = None
    max_iters: int = 10**6

    def __post_init__(self):
        if not self.eps_obj > 0:
            raise ConfigurationError(f"eps_obj must be positive, got {self.eps_obj}")
        if not self.L0 > 0:
            raise ConfigurationError(f"L0 must be positive, got {self.L0}")
        if not self.eta > 1:
            raise ConfigurationError(f"eta must exceed 1, got {self.eta}")
        if self.R_bound is not None and not self.R_bound > 0:
            raise ConfigurationError(f"R_bound must be positive, got {self.R_bound}")
        if int(self.max_iters) < 1:
            raise ConfigurationError("max_iters must be positive")


@dataclass
class StationarityCertificate:
    """A point together with an explicit element of the subdifferential there.

    ``subgradient_witness`` lies in the subdifferential of ``phi1 + phi2`` at
    ``point`` and ``residual_norm`` is its Euclidean norm, so it bounds the
    distance from zero to the subdifferential.
    """

    point: np.ndarray
    residual_norm: float
    subgradient_witness: np.ndarray
    iterations: int = 0
    converged: bool = True
    lipschitz: float = float("nan")


@dataclass
class ConvexResult:
    """Output of :func:`apg_convex`."""

    x: np.ndarray
    iterations: int
    converged: bool
    lipschitz: float
    residual_norm: float


class _Counted:
    """Oracle wrapper that books each query in a counter."""

    __slots__ = ("phi1", "phi2", "counter")

    def __init__(self, phi1: SmoothOracle, phi2: ProxOracle, counter: QueryCounter):
        self.phi1, self.phi2, self.counter = phi1, phi2, counter

    def value(self, x) -> float:
        self.counter.value_evals += 1
        return float(self.phi1.value(x))

    def grad(self, x) -> np.ndarray:
        self.counter.gradient_evals += 1
        g = np.asarray(self.phi1.gradient(x), dtype=float)
        if not all_finite(g):
            raise NumericalFailure("gradient oracle returned a non-finite vector")
        return g

    def prox(self, y, t) -> np.ndarray:
        self.counter.prox_evals += 1
        x = np.asarray(self.phi2.prox(y, t), dtype=float)
        if not all_finite(x):
            raise NumericalFailure("proximal step produced a non-finite point")
        return x


def sufficient_decrease(f_new: float, f_ref: float, g_ref: np.ndarray, d: np.ndarray,
                        L: float) -> bool:
    """Quadratic upper-bound test ``f_new <= f_ref + <g_ref, d> + L/2 ||d||^2``.

    A slack of a few ulps of the magnitudes involved absorbs roundoff.
    """
    dd = float(d @ d)
    lin = float(g_ref @ d)
    rhs = f_ref + lin + 0.5 * L * dd
    slack = _ROUNDOFF * (abs(f_new) + abs(f_ref) + abs(lin))
    return f_new <= rhs + slack


def curvature_test(g_new: np.ndarray, g_ref: np.ndarray, d: np.ndarray, L: float) -> bool:
    """Gradient form of the upper-bound test: ``<g_new - g_ref, d> <= L/2 ||d||^2``.

    For a convex function, convexity at the new point gives
    ``f_new - f_ref - <g_ref, d> <= <g_new - g_ref, d>``, so this test implies
    :func:`sufficient_decrease`. Unlike the value form it does not suffer
    from cancellation once ``d`` is tiny, which matters when the target
    residual is close to machine precision relative to the gradient scale.
    """
    return float((g_new - g_ref) @ d) <= 0.5 * L * float(d @ d)


def _finite(x: np.ndarray, where: str) -> None:
    if not all_finite(x):
        raise NumericalFailure(f"non-finite iterate in {where}")


def apg_strongly_convex(phi1: SmoothOracle, phi2: ProxOracle, cfg: ApgStrongConfig, y0,
                        counter: QueryCounter | None = None,
                        callback: Callable[..., None] | None = None) -> StationarityCertificate:
    r"""Accelerated proximal gradient for a strongly convex composite problem.

    Minimizes :math:`\varphi = \varphi_1 + \varphi_2` where
    :math:`\varphi_1` is ``cfg.mu``-strongly convex with Lipschitz
    gradient. Each iteration backtracks on the estimate ``L`` of the
    Lipschitz constant, takes an accelerated step with momentum
    ``sqrt(mu / L)``, and then an additional proximal step from the new
    iterate whose output :math:`\hat x` satisfies

    .. math:: v = \hat L(\tilde x - \hat x) + \nabla\varphi_1(\hat x)
              - \nabla\varphi_1(\tilde x) \in \partial\varphi(\hat x).

    The method stops when ``||v|| <= cfg.eps_stat``. Step sizes are
    accepted with :func:`curvature_test`, which implies the usual quadratic
    upper-bound test, so the method queries gradients and proximal maps only.

    Parameters
    ----------
    phi1 : SmoothOracle
        Smooth strongly convex part.
    phi2 : ProxOracle
        Prox-friendly part.
    cfg : ApgStrongConfig
        Solver parameters.
    y0 : array_like
        Starting point.
    counter : QueryCounter, optional
        Query counter to update.
    callback : callable, optional
        Called as ``callback(k, x_tilde, x_hat, residual, L)`` after every
        iteration.

    Returns
    -------
    StationarityCertificate
        The last :math:`\hat x` with its witness; ``converged`` is False if
        the iteration budget ran out, in which case the certificate with the
        smallest residual seen is returned.

    Raises
    ------
    NumericalFailure
        On non-finite iterates or when backtracking exceeds 60 increases.
    """
    counter = counter if counter is not None else QueryCounter()
    ev = _Counted(phi1, phi2, counter)
    mu, g1, g2, L_min = float(cfg.mu), float(cfg.gamma1), float(cfg.gamma2), float(cfg.L_min)
    y0 = np.asarray(y0, dtype=float).copy()
    _finite(y0, "strongly convex APG start")

    # Initial backtracking from y0.
    L = L_min / g1
    g_y = ev.grad(y0)
    for _ in range(MAX_BACKTRACKS + 1):
        L *= g1
        x = ev.prox(y0 - g_y / L, 1.0 / L)
        if curvature_test(ev.grad(x), g_y, x - y0, L):
            break
    else:
        raise NumericalFailure("initial backtracking exceeded the doubling cap")

    x_prev, x_cur = x, x
    L_k = max(L_min, L / g2)
    alpha_prev = 1.0
    best: StationarityCertificate | None = None

    for k in range(int(cfg.max_iters)):
        L_t = L_k / g1
        for _ in range(MAX_BACKTRACKS + 1):
            L_t *= g1
            alpha = min(1.0, math.sqrt(mu / L_t))
            beta = alpha * (1.0 - alpha_prev) / (alpha_prev * (1.0 + alpha))
            y = x_cur + beta * (x_cur - x_prev) if beta != 0.0 else x_cur
            g_y = ev.grad(y)
            x_t = ev.prox(y - g_y / L_t, 1.0 / L_t)
            g_t = ev.grad(x_t)
            if curvature_test(g_t, g_y, x_t - y, L_t):
                break
        else:
            raise NumericalFailure(f"backtracking exceeded the doubling cap at iteration {k}")
        _finite(x_t, "strongly convex APG")

        # Extra proximal step that yields an explicit subgradient.
        L_h = L_t / g1
        for _ in range(MAX_BACKTRACKS + 1):
            L_h *= g1
            x_h = ev.prox(x_t - g_t / L_h, 1.0 / L_h)
            g_h = ev.grad(x_h)
            if curvature_test(g_h, g_t, x_h - x_t, L_h):
                break
        else:
            raise NumericalFailure(f"certificate backtracking exceeded the doubling cap at iteration {k}")

        v = L_h * (x_t - x_h) + g_h - g_t
        res = math.sqrt(float(v @ v))
        if not math.isfinite(res):
            raise NumericalFailure(f"non-finite residual at iteration {k}")
        x_prev, x_cur = x_cur, x_t
        L_k = max(L_min, L_t / g2)
        alpha_prev = alpha
        if callback is not None:
            callback(k, x_t, x_h, res, L_t)
        if res <= cfg.eps_stat:
            return StationarityCertificate(x_h, res, v, k + 1, True, L_h)
        if best is None or res < best.residual_norm:
            best = StationarityCertificate(x_h, res, v, k + 1, False, L_h)

    assert best is not None
    best.iterations = int(cfg.max_iters)
    return best


def apg_convex(phi1: SmoothOracle, phi2: ProxOracle, cfg: ApgConvexConfig, x0,
               counter: QueryCounter | None = None,
               callback: Callable[..., None] | None = None) -> ConvexResult:
    r"""FISTA with backtracking for a convex composite problem.

    At iteration ``k`` the estimate ``L`` is multiplied by ``eta`` until the
    proximal gradient point :math:`p_L(y)` satisfies
    :math:`\varphi(p_L(y)) \le Q_L(p_L(y), y)`; the momentum sequence is
    :math:`t_{k+1} = (1 + \sqrt{1 + 4 t_k^2}) / 2`.

    Stopping rule: with ``cfg.R_bound`` set, stop once
    ``2 eta L_phi1 R^2 / (k+1)^2 <= eps_obj`` where ``L_phi1`` is the
    Lipschitz hint of ``phi1`` (the running estimate if no hint is
    available). Without it, stop once ``||v|| * max(1, ||x_k - x0||) <=
    eps_obj`` where ``v = L (y - x_k) + grad(x_k) - grad(y)`` is a
    subgradient of the objective at ``x_k``.

    Parameters
    ----------
    phi1 : SmoothOracle
        Smooth convex part.
    phi2 : ProxOracle
        Prox-friendly part.
    cfg : ApgConvexConfig
        Solver parameters.
    x0 : array_like
        Starting point.
    counter : QueryCounter, optional
        Query counter to update.
    callback : callable, optional
        Called as ``callback(k, x_k, L_k)`` after every iteration ``k >= 1``.

    Returns
    -------
    ConvexResult
        Final iterate ``x_k`` and run statistics.
    """
    counter = counter if counter is not None else QueryCounter()
    ev = _Counted(phi1, phi2, counter)
    eta = float(cfg.eta)
    x0 = np.asarray(x0, dtype=float).copy()
    _finite(x0, "FISTA start")
    x_prev = x0
    y = x0
    t = 1.0
    L = float(cfg.L0)
    res = float("inf")
    use_bound = cfg.R_bound is not None
    x = x0

    for k in range(1, int(cfg.max_iters) + 1):
        f_y, g_y = ev.value(y), ev.grad(y)
        for _ in range(MAX_BACKTRACKS + 1):
            x = ev.prox(y - g_y / L, 1.0 / L)
            f_x = ev.value(x)
            if sufficient_decrease(f_x, f_y, g_y, x - y, L):
                break
            L *= eta
        else:
            raise NumericalFailure(f"FISTA backtracking exceeded the doubling cap at iteration {k}")
        _finite(x, "FISTA")

        if use_bound:
            L_ref = phi1.lipschitz_hint if phi1.lipschitz_hint is not None else L
            done = 2.0 * eta * L_ref * cfg.R_bound**2 / (k + 1) ** 2 <= cfg.eps_obj
        else:
            g_x = ev.grad(x)
            res = float(np.linalg.norm(L * (y - x) + g_x - g_y))
            done = res * max(1.0, float(np.linalg.norm(x - x0))) <= cfg.eps_obj
        if callback is not None:
            callback(k, x, L)
        if done:
            return ConvexResult(x, k, True, L, res)

        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = x + ((t - 1.0) / t_next) * (x - x_prev)
        x_prev, t = x, t_next

    return ConvexResult(x, int(cfg.max_iters), False, L, res)
