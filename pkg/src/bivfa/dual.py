"""Level-constrained lower subproblem and its Lagrange dual.

For a level ``c`` the subproblem is

    minimize   g(x) + (mu/2) ||x - x0||^2
    subject to f(x) <= c,

with Lagrangian ``L(x, z) = g(x) + (mu/2)||x - x0||^2 + z (f(x) - c)``.
Because ``x(z) = argmin_x L(x, z)`` does not depend on ``c``, points and
certificates computed for one level remain valid for every other level;
only the constraint value ``f(x) - c`` changes. The dual variable is
located by doubling (:func:`interval_search`) and then bisection
(:func:`dual_bisection`), each step solving the inner problem with
:func:`~bivfa.apg.apg_strongly_convex`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np

from .apg import ApgStrongConfig, StationarityCertificate, apg_strongly_convex
from .composite import BilevelInstance, QueryCounter, SmoothOracle, evaluate
from .errors import ConfigurationError, NumericalFailure, TheoryViolationError
from .prox import ProxOracle

__all__ = [
    "Subproblem",
    "KktResidual",
    "IntervalKind",
    "MultiplierInterval",
    "ToleranceSchedule",
    "InnerOptions",
    "InnerSolveCache",
    "SubproblemResult",
    "lagrangian_oracles",
    "solve_lagrangian",
    "kkt_residual",
    "interval_search",
    "interval_search_cap",
    "dual_bisection",
    "solve_subproblem",
]


@dataclass(frozen=True)
class Subproblem:
    """Perturbed level-constrained lower problem at level ``c``."""

    instance: BilevelInstance
    c: float
    eps_perturb: float
    anchor: np.ndarray

    def __post_init__(self):
        if not self.eps_perturb > 0:
            raise ConfigurationError(f"perturbation weight must be positive, got {self.eps_perturb}")
        if not math.isfinite(self.c):
            raise ConfigurationError(f"level c must be finite, got {self.c}")
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float))

    def f_c(self, x, counter: QueryCounter | None = None) -> float:
        """Constraint value ``f(x) - c`` (``+inf`` outside the domain of f2)."""
        return evaluate(self.instance.upper, x, counter) - self.c

    def with_level(self, c: float) -> "Subproblem":
        return replace(self, c=float(c))


@dataclass(frozen=True)
class KktResidual:
    """Residuals of an approximate KKT pair ``(x, z)``."""

    stationarity: float
    primal_violation: float
    complementarity: float

    def satisfied(self, sched: "ToleranceSchedule") -> bool:
        return (self.stationarity <= sched.eps1 and self.primal_violation <= sched.eps2
                and self.complementarity <= sched.eps3)


@dataclass(frozen=True)
class ToleranceSchedule:
    """Inner tolerances derived from a base tolerance ``eps``.

    ``eps1 = eps^2/D`` (stationarity), ``eps2 = B_f eps/D`` (feasibility),
    ``eps3 = 2 D_z B_f (1 + B_f) eps/D`` (complementarity) and
    ``eps4 = eps^2/D`` (bisection width).
    """

    eps: float
    D: float = 1.0
    B_f: float = 1.0
    D_z: float = 1.0

    def __post_init__(self):
        for name in ("eps", "D", "B_f", "D_z"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ConfigurationError(f"{name} must be positive and finite, got {val}")

    @classmethod
    def balanced(cls, eps: float, B_f: float, D_z: float, D_g: float = 0.0) -> "ToleranceSchedule":
        """Schedule with ``D = (1 + D_g (1 + D_g)) max(B_f, 2 D_z B_f (1 + B_f))``.

        This choice makes ``eps2 <= eps`` and ``eps3 <= eps``, so the
        subproblem solution is ``eps``-feasible and ``eps``-complementary.
        """
        D = (1.0 + D_g * (1.0 + D_g)) * max(B_f, 2.0 * D_z * B_f * (1.0 + B_f))
        return cls(eps, D, B_f, D_z)

    @property
    def eps1(self) -> float:
        return self.eps**2 / self.D

    @property
    def eps2(self) -> float:
        return self.B_f * self.eps / self.D

    @property
    def eps3(self) -> float:
        return (2.0 * self.D_z * self.B_f + 2.0 * self.D_z * self.B_f**2) * self.eps / self.D

    @property
    def eps4(self) -> float:
        return self.eps**2 / self.D

    def as_dict(self) -> dict:
        return {"eps": self.eps, "D": self.D, "B_f": self.B_f, "D_z": self.D_z,
                "eps1": self.eps1, "eps2": self.eps2, "eps3": self.eps3, "eps4": self.eps4}


@dataclass(frozen=True)
class InnerOptions:
    """Settings forwarded to every inner strongly convex solve.

    ``use_curvature_hints`` adds the strong convexity moduli declared by the
    smooth oracles to the perturbation weight when configuring the inner
    solver; the perturbation alone is always a valid (smaller) modulus.
    """

    L_min: float = 1e-6
    gamma1: float = 2.0
    gamma2: float = 2.0
    max_iters: int = 10**6
    use_curvature_hints: bool = True


class IntervalKind(str, Enum):
    ZERO = "ZeroSolution"
    ACCEPTED = "Accepted"
    BRACKET = "Bracket"


@dataclass
class MultiplierInterval:
    """Result of the multiplier search.

    ``x``/``f_val``/``cert`` describe the inner solution at multiplier ``b``
    (at ``0`` for ``ZERO``) when known; they remain valid for any level
    because the inner minimizer does not depend on ``c``.
    """

    kind: IntervalKind
    a: float
    b: float
    x: np.ndarray | None = None
    f_val: float | None = None
    cert: StationarityCertificate | None = None
    apg_calls: int = 0

    @property
    def upper(self) -> float:
        return 0.0 if self.kind is IntervalKind.ZERO else self.b

    def widened_from_zero(self) -> "MultiplierInterval":
        """The interval ``[0, max Z]`` used after a lower-bound step."""
        if self.upper == 0.0:
            return MultiplierInterval(IntervalKind.ZERO, 0.0, 0.0, self.x, self.f_val, self.cert)
        return MultiplierInterval(IntervalKind.BRACKET, 0.0, self.upper, self.x, self.f_val, self.cert)


@dataclass
class SubproblemResult:
    x: np.ndarray
    z: float
    f_val: float
    g_val: float
    kkt: KktResidual
    cert: StationarityCertificate
    interval: MultiplierInterval | None = None
    apg_calls: int = 0


def _combined_value(lower: ProxOracle, upper: ProxOracle, z: float):
    def value(x):
        gv = lower.value(x)
        if z == 0.0:
            return gv
        return gv + z * upper.value(x)
    return value


def lagrangian_oracles(sub: Subproblem, z: float,
                       use_curvature_hints: bool = False) -> tuple[SmoothOracle, ProxOracle]:
    """Smooth and prox parts of ``L(., z)``.

    The smooth part is ``g1(x) + (mu/2)||x - x0||^2 + z (f1(x) - c)`` with
    Lipschitz hint ``L_g1 + z L_f1 + mu`` (``None`` if a hint is missing).
    The prox part is ``g2 + z f2`` through the instance's combined rule.
    """
    z = float(z)
    if not (math.isfinite(z) and z >= 0):
        raise ConfigurationError(f"multiplier must be nonnegative, got {z}")
    inst = sub.instance
    g1, f1 = inst.lower.smooth, inst.upper.smooth
    mu, x0, c = float(sub.eps_perturb), sub.anchor, float(sub.c)

    if z == 0.0:
        def value(x):
            d = x - x0
            return float(g1.value(x)) + 0.5 * mu * float(d @ d)

        def gradient(x):
            return g1.gradient(x) + mu * (x - x0)
    else:
        def value(x):
            d = x - x0
            return float(g1.value(x)) + 0.5 * mu * float(d @ d) + z * (float(f1.value(x)) - c)

        def gradient(x):
            return g1.gradient(x) + mu * (x - x0) + z * f1.gradient(x)

    hint = None
    if g1.lipschitz_hint is not None and f1.lipschitz_hint is not None:
        hint = g1.lipschitz_hint + z * f1.lipschitz_hint + mu
    strong = mu
    if use_curvature_hints:
        strong = mu + g1.strong_convexity + z * f1.strong_convexity
    smooth = SmoothOracle(value, gradient, hint, strong)
    lower, upper = inst.lower.nonsmooth, inst.upper.nonsmooth

    def prox(y, t):
        return inst.combined_prox(y, t, z)

    nonsmooth = ProxOracle(f"lagrangian[{lower.kind}+z*{upper.kind}]",
                           _combined_value(lower, upper, z), prox)
    return smooth, nonsmooth


def solve_lagrangian(sub: Subproblem, z: float, sched: ToleranceSchedule, x_start,
                     counter: QueryCounter, opts: InnerOptions = InnerOptions()
                     ) -> StationarityCertificate:
    """Minimize ``L(., z)`` to stationarity ``eps1`` from ``x_start``."""
    smooth, nonsmooth = lagrangian_oracles(sub, z, opts.use_curvature_hints)
    cfg = ApgStrongConfig(mu=smooth.strong_convexity, eps_stat=sched.eps1, L_min=opts.L_min,
                          gamma1=opts.gamma1, gamma2=opts.gamma2, max_iters=opts.max_iters)
    cert = apg_strongly_convex(smooth, nonsmooth, cfg, x_start, counter)
    if not cert.converged:
        raise NumericalFailure(
            f"inner solve did not reach stationarity {sched.eps1:.3e} at c={sub.c!r}, z={z!r} "
            f"(residual {cert.residual_norm:.3e} after {cert.iterations} iterations)"
        )
    return cert


class InnerSolveCache:
    """Memo of inner solutions keyed by multiplier, with an optional listener.

    The inner minimizer depends on the multiplier, the anchor and the
    perturbation weight but not on the level, so one cache serves a whole
    outer run with a fixed anchor. An entry is reused only if its
    certificate meets the stationarity tolerance currently requested.
    With ``reuse=False`` nothing is memoized and the object only forwards
    fresh solves to ``listener(z, cert, f_val)``.
    """

    def __init__(self, reuse: bool = True,
                 listener: Callable[[float, StationarityCertificate, float], None] | None = None):
        self._store: dict[float, tuple[StationarityCertificate, float]] = {}
        self.reuse = reuse
        self.listener = listener
        self.hits = 0

    def lookup(self, z: float, eps1: float):
        hit = self._store.get(float(z))
        if hit is None or hit[0].residual_norm > eps1:
            return None
        self.hits += 1
        return hit

    def store(self, z: float, cert: StationarityCertificate, f_val: float) -> None:
        if self.reuse:
            self._store[float(z)] = (cert, f_val)
        if self.listener is not None:
            self.listener(float(z), cert, f_val)

    def __len__(self) -> int:
        return len(self._store)


def _solve_at(sub: Subproblem, z: float, sched: ToleranceSchedule, x_start, counter: QueryCounter,
              opts: InnerOptions, cache: InnerSolveCache | None):
    """Inner solve at ``z`` plus ``f`` at the result; returns ``(cert, f_val, fresh)``."""
    if cache is not None:
        hit = cache.lookup(z, sched.eps1)
        if hit is not None:
            return hit[0], hit[1], False
    cert = solve_lagrangian(sub, z, sched, x_start, counter, opts)
    f_val = evaluate(sub.instance.upper, cert.point, counter)
    if cache is not None:
        cache.store(z, cert, f_val)
    return cert, f_val, True


def kkt_residual(sub: Subproblem, cert: StationarityCertificate, z: float,
                 counter: QueryCounter | None = None, f_val: float | None = None) -> KktResidual:
    """Stationarity, feasibility and complementarity residuals of ``(cert.point, z)``."""
    fc = (f_val - sub.c) if f_val is not None else sub.f_c(cert.point, counter)
    comp = abs(z * fc) if z != 0.0 else 0.0
    return KktResidual(float(cert.residual_norm), max(fc, 0.0), comp)


def interval_search_cap(D_z: float, b_init: float) -> int:
    """Largest number of inner solves the doubling search may need."""
    return max(0, math.ceil(math.log2(D_z / b_init))) + 2


def interval_search(sub: Subproblem, sched: ToleranceSchedule, x_start, b_init: float,
                    counter: QueryCounter, opts: InnerOptions = InnerOptions(),
                    cache: InnerSolveCache | None = None) -> MultiplierInterval:
    """Find a multiplier interval by doubling, warm-starting every inner solve.

    Solves at ``z = 0``; if the constraint is satisfied to ``eps2`` the
    result is ``ZERO``. Otherwise ``b`` starts at ``b_init`` and doubles
    while the constraint is violated by more than ``eps2`` and
    ``b <= D_z``. A final pair that also meets the complementarity
    tolerance is ``ACCEPTED``; anything else is a ``BRACKET [a, b]``.
    The number of inner solves never exceeds :func:`interval_search_cap`.
    Solves answered by ``cache`` are not counted in ``apg_calls``.

    Raises
    ------
    TheoryViolationError
        If the constraint is still violated once ``b`` exceeds ``D_z`` or the
        solve budget is spent.
    """
    if not b_init > 0:
        raise ConfigurationError(f"b_init must be positive, got {b_init}")
    calls = 0

    cert, f_val, fresh = _solve_at(sub, 0.0, sched, x_start, counter, opts, cache)
    calls += fresh
    if max(f_val - sub.c, 0.0) <= sched.eps2:
        return MultiplierInterval(IntervalKind.ZERO, 0.0, 0.0, cert.point, f_val, cert, calls)

    a, b = 0.0, float(b_init)
    cert, f_val, fresh = _solve_at(sub, b, sched, cert.point, counter, opts, cache)
    calls += fresh
    cap = interval_search_cap(sched.D_z, b_init)
    while max(f_val - sub.c, 0.0) > sched.eps2 and b <= sched.D_z and calls < cap:
        a, b = b, 2.0 * b
        cert, f_val, fresh = _solve_at(sub, b, sched, cert.point, counter, opts, cache)
        calls += fresh

    if max(f_val - sub.c, 0.0) > sched.eps2:
        raise TheoryViolationError(
            f"constraint still violated by {f_val - sub.c:.3e} > eps2={sched.eps2:.3e} at "
            f"multiplier {b:.6g} (D_z={sched.D_z:.6g}, {calls} solves, c={sub.c!r}); D, B_f or Delta1 is "
            "miscalibrated for this instance"
        )
    if abs(b * (f_val - sub.c)) <= sched.eps3:
        return MultiplierInterval(IntervalKind.ACCEPTED, b, b, cert.point, f_val, cert, calls)
    return MultiplierInterval(IntervalKind.BRACKET, a, b, cert.point, f_val, cert, calls)


def dual_bisection(sub: Subproblem, Z: MultiplierInterval, sched: ToleranceSchedule,
                   counter: QueryCounter, x_start=None, opts: InnerOptions = InnerOptions(),
                   cache: InnerSolveCache | None = None) -> SubproblemResult:
    """Bisection on the multiplier inside ``Z``.

    While ``b - a > eps4`` the midpoint ``e`` is solved (warm start from
    the latest inner solution); a violated constraint moves ``a`` up, a
    pair meeting the complementarity tolerance is returned at once, and
    otherwise ``b`` moves down. On exit the solution at ``b`` is returned.
    ``ZERO`` and ``ACCEPTED`` intervals are returned without iterating.
    """
    calls = 0
    if Z.kind is not IntervalKind.BRACKET:
        z = 0.0 if Z.kind is IntervalKind.ZERO else Z.b
        if Z.x is None:
            cert, f_val, fresh = _solve_at(sub, z, sched,
                                           x_start if x_start is not None else sub.anchor,
                                           counter, opts, cache)
            calls += fresh
        else:
            cert, f_val = Z.cert, Z.f_val
        return _result(sub, cert, z, f_val, counter, Z, calls)

    a, b = float(Z.a), float(Z.b)
    if not (0.0 <= a < b or (a == b and Z.x is not None)):
        raise ConfigurationError(f"invalid bracket [{a}, {b}]")
    cert_b, f_b = Z.cert, Z.f_val
    x_cur = Z.x if Z.x is not None else (x_start if x_start is not None else sub.anchor)
    if x_start is not None:
        x_cur = x_start
    while b - a > sched.eps4:
        e = 0.5 * (a + b)
        if not (a < e < b):
            break  # the bracket cannot be split further in floating point
        cert, f_val, fresh = _solve_at(sub, e, sched, x_cur, counter, opts, cache)
        calls += fresh
        x_cur = cert.point
        fc = f_val - sub.c
        if max(fc, 0.0) > sched.eps2:
            a = e
        elif abs(e * fc) <= sched.eps3:
            return _result(sub, cert, e, f_val, counter, Z, calls)
        else:
            b, cert_b, f_b = e, cert, f_val
    if cert_b is None:
        cert_b, f_b, fresh = _solve_at(sub, b, sched, x_cur, counter, opts, cache)
        calls += fresh
    return _result(sub, cert_b, b, f_b, counter, Z, calls)


def _result(sub, cert, z, f_val, counter, Z, calls) -> SubproblemResult:
    g_val = evaluate(sub.instance.lower, cert.point, counter)
    kkt = kkt_residual(sub, cert, z, f_val=f_val)
    return SubproblemResult(cert.point, float(z), float(f_val), float(g_val), kkt, cert, Z, calls)


def solve_subproblem(instance: BilevelInstance, c: float, eps: float, sched: ToleranceSchedule,
                     x_start, counter: QueryCounter, anchor=None, b_init: float = 1.0,
                     opts: InnerOptions = InnerOptions()) -> SubproblemResult:
    """Approximately solve the level-``c`` subproblem.

    Runs :func:`interval_search` followed by :func:`dual_bisection` with
    perturbation weight ``eps`` around ``anchor`` (``x_start`` if omitted).
    The result satisfies ``f(x) - c <= eps2`` and carries its KKT residuals.
    """
    x_start = np.asarray(x_start, dtype=float)
    anchor = x_start if anchor is None else np.asarray(anchor, dtype=float)
    sub = Subproblem(instance, float(c), float(eps), anchor)
    Z = interval_search(sub, sched, x_start, b_init, counter, opts)
    res = dual_bisection(sub, Z, sched, counter, Z.x, opts)
    res.apg_calls += Z.apg_calls
    return res
