"""Closed-form proximal operators and projections.

Every function here is a pure function of its arguments. Vectors are
one-dimensional ``numpy`` arrays of floats; inputs are never modified.

The :class:`ProxOracle` container bundles the value and the proximal map
of a prox-friendly convex function. Indicator functions evaluate to
``+inf`` outside their set, with a small relative tolerance so that the
output of the matching projection is always reported as feasible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigurationError, InputDomainError, UnsupportedInstanceError

__all__ = [
    "ProxOracle",
    "soft_threshold",
    "project_nonneg",
    "project_l2_ball",
    "project_l1_ball",
    "project_l1_l2_intersection",
    "zero_function",
    "l1_norm",
    "nonneg_indicator",
    "l1_ball_indicator",
    "l2_ball_indicator",
    "combined_prox",
    "register_combined_prox",
    "registered_pairs",
]

# Relative slack used when deciding membership of a set for indicator values.
FEASIBILITY_RTOL = 1e-9
INTERSECTION_TOL = 1e-12


def all_finite(x: np.ndarray) -> bool:
    """True when every component is finite.

    The sum is checked first because it is much cheaper on small vectors;
    only a non-finite sum (which may also come from overflow) triggers the
    componentwise test.
    """
    return math.isfinite(float(x.sum())) or bool(np.isfinite(x).all())


def _norm(x: np.ndarray) -> float:
    return math.sqrt(float(x @ x))


def _as_finite_vector(y) -> np.ndarray:
    arr = np.asarray(y, dtype=float)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if not all_finite(arr):
        raise InputDomainError("proximal operators require finite input components")
    return arr


def _check_step(t: float) -> float:
    t = float(t)
    if not np.isfinite(t) or t <= 0:
        raise ConfigurationError(f"step size must be a positive finite number, got {t!r}")
    return t


def _check_radius(r: float, name: str = "r") -> float:
    r = float(r)
    if not np.isfinite(r) or r <= 0:
        raise ConfigurationError(f"radius {name} must be positive and finite, got {r!r}")
    return r


def soft_threshold(y, t: float) -> np.ndarray:
    """Prox of ``t * ||.||_1``: componentwise ``sign(y) * max(|y| - t, 0)``.

    Parameters
    ----------
    y : array_like
        Input point.
    t : float
        Threshold, must be positive.

    Returns
    -------
    numpy.ndarray
        The shrunk vector.

    Examples
    --------
    >>> soft_threshold([3.0, -0.5, 0.0], 1.0)
    array([2., 0., 0.])
    """
    y = _as_finite_vector(y)
    t = _check_step(t)
    return np.sign(y) * np.maximum(np.abs(y) - t, 0.0)


def project_nonneg(y) -> np.ndarray:
    """Projection onto the nonnegative orthant."""
    y = _as_finite_vector(y)
    return np.maximum(y, 0.0)


def project_l2_ball(y, r: float) -> np.ndarray:
    """Projection onto ``{x : ||x||_2 <= r}`` by radial scaling."""
    y = _as_finite_vector(y)
    r = _check_radius(r)
    nrm = _norm(y)
    if nrm <= r:
        return y.copy()
    return y * (r / nrm)


def _l1_threshold(a: np.ndarray, r: float) -> float:
    """Exact threshold ``theta`` with ``sum(max(a - theta, 0)) = r`` for ``a >= 0``.

    Assumes ``sum(a) > r``. Uses the sort-based finite algorithm.
    """
    s = np.sort(a)[::-1]
    cums = np.cumsum(s)
    ks = np.arange(1, s.size + 1)
    # Largest k with s_k > (cums_k - r) / k.
    cand = (cums - r) / ks
    k = np.nonzero(s > cand)[0][-1]
    return max(float(cand[k]), 0.0)


def project_l1_ball(y, r: float) -> np.ndarray:
    """Projection onto ``{x : ||x||_1 <= r}``.

    Points already inside the ball are returned unchanged. Otherwise the
    result is ``soft_threshold(y, theta)`` with the unique ``theta > 0``
    that puts it on the sphere; ``theta`` is computed exactly by sorting.

    Parameters
    ----------
    y : array_like
        Input point.
    r : float
        Radius, must be positive.

    Returns
    -------
    numpy.ndarray
        The projected point, with ``||x||_1 <= r`` up to roundoff.
    """
    y = _as_finite_vector(y)
    r = _check_radius(r)
    a = np.abs(y)
    if a.sum() <= r:
        return y.copy()
    theta = _l1_threshold(a, r)
    return np.sign(y) * np.maximum(a - theta, 0.0)


def _shrink_then_scale(a: np.ndarray, theta: float, r2: float) -> np.ndarray:
    s = np.maximum(a - theta, 0.0)
    nrm = _norm(s)
    if nrm > r2:
        s *= r2 / nrm
    return s


def project_l1_l2_intersection(y, r1: float, r2: float) -> np.ndarray:
    """Projection onto ``{||x||_1 <= r1} ∩ {||x||_2 <= r2}``.

    For a trial multiplier ``theta`` of the l1 constraint the minimizer is
    the soft-thresholded point scaled back into the l2 ball, and its l1 norm
    is non-increasing in ``theta``. After sorting ``|y|`` the crossing
    segment between consecutive magnitudes is found exactly; inside it the
    l1 norm is an explicit function of ``theta``, so the multiplier solves
    either a linear equation (no scaling) or a quadratic one (scaled). A
    short bisection on that scalar function is the fallback when roundoff
    puts both closed forms outside the segment. The result is shrunk by
    at most a few ulps so that the l1 constraint holds exactly.

    Parameters
    ----------
    y : array_like
        Input point.
    r1, r2 : float
        Radii of the l1 and l2 balls, both positive.

    Returns
    -------
    numpy.ndarray
        The projected point.
    """
    y = _as_finite_vector(y)
    r1 = _check_radius(r1, "r1")
    r2 = _check_radius(r2, "r2")
    a = np.abs(y)
    sgn = np.sign(y)
    x0 = _shrink_then_scale(a, 0.0, r2)
    if x0.sum() <= r1:
        return sgn * x0
    theta = _intersection_threshold(a, r1, r2)
    x = _shrink_then_scale(a, theta, r2)
    l1 = x.sum()
    if l1 > r1:
        x *= r1 / l1
    return sgn * x


def _intersection_threshold(a: np.ndarray, r1: float, r2: float) -> float:
    """Multiplier ``theta`` at which the shrunk-and-scaled point has l1 norm ``r1``."""
    s = np.sort(a)[::-1]
    n = s.size
    c1 = np.concatenate(([0.0], np.cumsum(s)))
    c2 = np.concatenate(([0.0], np.cumsum(s * s)))


    # phi(s_j) with j-1 active entries; phi increases with j (theta decreasing)
    ks = np.arange(n)
    s1 = c1[ks] - ks * s
    s2 = c2[ks] - 2.0 * s * c1[ks] + ks * s * s
    phi = np.where(s2 <= r2 * r2, s1, r2 * s1 / np.sqrt(np.maximum(s2, r2 * r2)))
    below = np.nonzero(phi <= r1)[0]
    j = int(below[-1])  # phi(s_0) = 0 <= r1 always
    k = j + 1
    hi = float(s[j])
    lo = float(s[j + 1]) if j + 1 < n else 0.0
    C1, C2 = float(c1[k]), float(c2[k])

    def l1_at(theta: float) -> float:
        # the k largest entries are active
        s1 = C1 - k * theta
        s2 = C2 - 2.0 * theta * C1 + k * theta * theta
        if s2 <= r2 * r2:
            return s1
        return r2 * s1 / math.sqrt(s2)

    candidates = [(C1 - r1) / k]
    qa = r2 * r2 * k * k - r1 * r1 * k
    qb = 2.0 * C1 * (r1 * r1 - k * r2 * r2)
    qc = r2 * r2 * C1 * C1 - r1 * r1 * C2
    if qa != 0.0:
        disc = qb * qb - 4.0 * qa * qc
        if disc >= 0.0:
            sq = math.sqrt(disc)
            candidates += [(-qb + sq) / (2.0 * qa), (-qb - sq) / (2.0 * qa)]
    elif qb != 0.0:
        candidates.append(-qc / qb)
    tol = INTERSECTION_TOL * max(1.0, r1)
    best, best_res = None, np.inf
    for t in candidates:
        if not (lo - 1e-12 * max(1.0, hi) <= t <= hi + 1e-12 * max(1.0, hi)):
            continue
        t = min(max(t, lo), hi)
        res = abs(l1_at(t) - r1)
        if res < best_res:
            best, best_res = t, res
    if best is not None and best_res <= tol:
        return float(best)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if l1_at(mid) > r1:
            lo = mid
        else:
            hi = mid
        if hi - lo <= np.finfo(float).eps * max(1.0, hi):
            break
    return hi


INDICATOR_KINDS = frozenset({"nonneg", "l1_ball", "l2_ball"})


@dataclass(frozen=True)
class ProxOracle:
    """A convex function known through its value and proximal map.

    Parameters
    ----------
    kind : str
        Identifier used to look up combined proximal rules.
    value : callable
        ``value(x) -> float``, possibly ``+inf``.
    prox : callable
        ``prox(y, t) -> x`` returning ``argmin psi(x) + ||x - y||^2 / (2t)``.
    params : mapping
        Parameters of the function (radii, weights) for rule lookup.
    lipschitz : float or None
        Lipschitz constant of the function when finite everywhere.
    """

    kind: str
    value: Callable[[np.ndarray], float]
    prox: Callable[[np.ndarray, float], np.ndarray]
    params: Mapping[str, float] = field(default_factory=dict)
    lipschitz: float | None = None

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    @property
    def is_indicator(self) -> bool:
        """True for indicator functions of closed convex sets."""
        return self.kind in INDICATOR_KINDS


def zero_function() -> ProxOracle:
    """The function identically equal to zero."""

    def value(x):
        return 0.0

    def prox(y, t):
        _check_step(t)
        return _as_finite_vector(y).copy()

    return ProxOracle("zero", value, prox, {}, lipschitz=0.0)


def l1_norm(weight: float = 1.0) -> ProxOracle:
    """``weight * ||x||_1``. Its l2-Lipschitz constant is filled in lazily by callers."""
    weight = float(weight)
    if not np.isfinite(weight) or weight < 0:
        raise ConfigurationError(f"l1 weight must be nonnegative, got {weight!r}")

    def value(x):
        return weight * float(np.abs(x).sum())

    def prox(y, t):
        _check_step(t)
        if weight == 0:
            return _as_finite_vector(y).copy()
        return soft_threshold(y, t * weight)

    return ProxOracle("l1", value, prox, {"weight": weight})


def nonneg_indicator() -> ProxOracle:
    """Indicator of the nonnegative orthant."""

    def value(x):
        x = np.asarray(x, dtype=float)
        scale = max(1.0, float(np.abs(x).max(initial=0.0)))
        return 0.0 if np.all(x >= -FEASIBILITY_RTOL * scale) else np.inf

    def prox(y, t):
        _check_step(t)
        return project_nonneg(y)

    return ProxOracle("nonneg", value, prox, {})


def l1_ball_indicator(r: float) -> ProxOracle:
    """Indicator of ``{x : ||x||_1 <= r}``."""
    r = _check_radius(r)

    def value(x):
        return 0.0 if np.abs(x).sum() <= r * (1 + FEASIBILITY_RTOL) else np.inf

    def prox(y, t):
        _check_step(t)
        return project_l1_ball(y, r)

    return ProxOracle("l1_ball", value, prox, {"r": r})


def l2_ball_indicator(r: float) -> ProxOracle:
    """Indicator of ``{x : ||x||_2 <= r}``."""
    r = _check_radius(r)

    def value(x):
        return 0.0 if _norm(np.asarray(x, dtype=float)) <= r * (1 + FEASIBILITY_RTOL) else np.inf

    def prox(y, t):
        _check_step(t)
        return project_l2_ball(y, r)

    return ProxOracle("l2_ball", value, prox, {"r": r})


# ---------------------------------------------------------------------------
# Combined prox of t * (g2 + z * f2)

CombinedRule = Callable[[np.ndarray, float, float, ProxOracle, ProxOracle], np.ndarray]
_REGISTRY: dict[tuple[str, str], CombinedRule] = {}


def register_combined_prox(lower_kind: str, upper_kind: str, rule: CombinedRule) -> None:
    """Register ``rule(y, t, z, lower, upper)`` computing ``prox_{t(g2 + z f2)}(y)``."""
    _REGISTRY[(lower_kind, upper_kind)] = rule


def registered_pairs() -> list[tuple[str, str]]:
    return sorted(_REGISTRY)


def _lower_only(y, t, z, lower, upper):
    return lower.prox(y, t)


def _nonneg_zero(y, t, z, lower, upper):
    return project_nonneg(y)


def _zero_l1(y, t, z, lower, upper):
    tz = t * z * upper.params["weight"]
    if tz <= 0:
        return _as_finite_vector(y).copy()
    return soft_threshold(y, tz)


def _l1ball_l2ball(y, t, z, lower, upper):
    # z * indicator equals the indicator for z > 0 and vanishes at z = 0.
    if z > 0:
        return project_l1_l2_intersection(y, lower.params["r"], upper.params["r"])
    return project_l1_ball(y, lower.params["r"])


register_combined_prox("zero", "zero", _lower_only)
register_combined_prox("nonneg", "zero", _nonneg_zero)
register_combined_prox("l1_ball", "zero", _lower_only)
register_combined_prox("l2_ball", "zero", _lower_only)
register_combined_prox("zero", "l1", _zero_l1)
register_combined_prox("l1_ball", "l2_ball", _l1ball_l2ball)


def combined_prox(y, t: float, z: float, lower: ProxOracle, upper: ProxOracle) -> np.ndarray:
    """Prox of ``t * (g2 + z * f2)`` at ``y`` for a registered pair of kinds.

    Parameters
    ----------
    y : array_like
        Input point.
    t : float
        Positive step.
    z : float
        Nonnegative multiplier on the upper nonsmooth part.
    lower, upper : ProxOracle
        The nonsmooth parts ``g2`` and ``f2``.

    Raises
    ------
    UnsupportedInstanceError
        If no closed-form rule is registered for ``(lower.kind, upper.kind)``.
    """
    t = _check_step(t)
    z = float(z)
    if not np.isfinite(z) or z < 0:
        raise ConfigurationError(f"multiplier z must be nonnegative, got {z!r}")
    rule = _REGISTRY.get((lower.kind, upper.kind))
    if rule is None:
        raise UnsupportedInstanceError(
            f"no combined proximal rule for lower={lower.kind!r}, upper={upper.kind!r}; "
            f"registered pairs: {registered_pairs()}"
        )
    return rule(_as_finite_vector(y), t, z, lower, upper)
