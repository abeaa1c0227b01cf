"""Outer bisection on the upper-level value.

The bilevel optimum ``p*`` is the smallest level ``c`` at which the
constrained lower value ``min{g(x) : f(x) <= c}`` reaches ``g*``. The
driver keeps a bracket ``[l, u]`` around ``p*``: for the midpoint ``c`` it
solves the level-``c`` subproblem, and if the resulting point is clearly
worse than the unconstrained lower solution ``x_g`` in ``g`` then ``c`` is
a lower bound, otherwise ``f`` at that point is a new upper bound.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .apg import ApgConvexConfig, apg_convex
from .composite import BilevelInstance, CompositeObjective, QueryCounter, evaluate
from .dual import (InnerOptions, InnerSolveCache, MultiplierInterval, Subproblem, SubproblemResult,
                   ToleranceSchedule, dual_bisection, interval_search,
                   interval_search_cap)
from .errors import ConfigurationError, NumericalFailure
from .prox import ProxOracle

__all__ = [
    "OuterConfig",
    "ExitKind",
    "Branch",
    "TraceRow",
    "SolveReport",
    "InitialBounds",
    "initial_bounds",
    "condition14",
    "solve",
]


class ExitKind(str, Enum):
    CONVERGED = "Converged"
    SAFEGUARD = "SafeguardTriggered"
    ITERATION_CAP = "IterationCap"


class Branch(str, Enum):
    LOWER = "LowerBound"
    UPPER = "UpperBound"
    SAFEGUARD = "Safeguard"
    INNER = "Inner"


@dataclass(frozen=True)
class OuterConfig:
    """Settings of the outer bisection.

    Attributes
    ----------
    eps : float
        Base tolerance; the target accuracies are ``eps_f = 4 eps`` for the
        upper level and ``eps_g = 3 eps`` for the lower level.
    Delta1 : float or None
        Regularity margin used by the safeguard and the multiplier bound.
        ``None`` selects ``1e-3 * max(1, |u0 - l0|)``.
    b_init : float
        Initial right end of the multiplier search interval.
    max_outer_iters : int or None
        Iteration cap; ``None`` selects ``10 + ceil(log2((u0 - l0)/eps_f))``.
    D : float or None
        Scaling constant of the inner tolerance schedule. ``None`` selects
        ``(1 + D_g (1 + D_g)) * max(B_f, 2 D_z B_f (1 + B_f))`` at every level,
        which keeps the feasibility and complementarity tolerances below
        ``eps``.
    D_g : float
        Assumed diameter of the relevant lower level set, used only by the
        automatic choice of ``D``.
    level_multiplier_bound : bool
        If True, bound the multiplier at level ``c`` by
        ``(g(x0) - g(x_g) + 1) / max(Delta1, c - f(x0))``; otherwise use the
        level-independent ``(g(x0) - g(x_g) + 1) / Delta1``.
    reuse_inner_solves : bool
        Memoize inner solutions by multiplier across levels; they do not
        depend on the level, so this only removes repeated work.
    B_f : float or None
        User lower bound on the Lipschitz constant of ``f``.
    inner : InnerOptions
        Settings of the strongly convex inner solver.
    fista_L0, fista_eta, fista_max_iters :
        Settings of the convex solver used for the initial bounds.
    """

    eps: float
    Delta1: float | None = None
    b_init: float = 1.0
    max_outer_iters: int | None = None
    D: float | None = None
    D_g: float = 0.0
    level_multiplier_bound: bool = True
    reuse_inner_solves: bool = True
    B_f: float | None = None
    inner: InnerOptions = field(default_factory=InnerOptions)
    fista_L0: float = 1.0
    fista_eta: float = 2.0
    fista_max_iters: int = 10**6

    def __post_init__(self):
        if not (math.isfinite(self.eps) and self.eps > 0):
            raise ConfigurationError(f"eps must be positive, got {self.eps}")
        if self.Delta1 is not None and not self.Delta1 > 0:
            raise ConfigurationError(f"Delta1 must be positive, got {self.Delta1}")
        if not self.b_init > 0:
            raise ConfigurationError(f"b_init must be positive, got {self.b_init}")
        if self.D is not None and not self.D > 0:
            raise ConfigurationError(f"D must be positive, got {self.D}")
        if not self.D_g >= 0:
            raise ConfigurationError(f"D_g must be nonnegative, got {self.D_g}")
        if self.B_f is not None and not self.B_f > 0:
            raise ConfigurationError(f"B_f must be positive, got {self.B_f}")
        if self.max_outer_iters is not None and int(self.max_outer_iters) < 1:
            raise ConfigurationError("max_outer_iters must be positive")

    @property
    def eps_f(self) -> float:
        return 4.0 * self.eps

    @property
    def eps_g(self) -> float:
        return 3.0 * self.eps

    def schedule(self, c: float, f_anchor: float, g_gap_anchor: float, delta1: float,
                 B_f: float) -> ToleranceSchedule:
        """Inner tolerance schedule for level ``c``.

        ``g_gap_anchor`` is ``g(x0) - g(x_g)`` and ``f_anchor`` is ``f(x0)``.
        """
        margin = max(delta1, c - f_anchor) if self.level_multiplier_bound else delta1
        D_z = (max(g_gap_anchor, 0.0) + 1.0) / margin
        if self.D is None:
            return ToleranceSchedule.balanced(self.eps, B_f, D_z, self.D_g)
        return ToleranceSchedule(self.eps, self.D, B_f, D_z)


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    queries: int
    seconds: float
    c: float
    l: float
    u: float
    branch: Branch
    f_val: float
    g_val: float
    f_gap: float | None = None
    g_gap: float | None = None


@dataclass
class InitialBounds:
    l0: float
    u0: float
    x_f: np.ndarray
    x_g: np.ndarray
    f_of_xf: float
    f_of_xg: float
    g_of_xg: float


@dataclass
class SolveReport:
    """Outcome of :func:`solve`."""

    x_final: np.ndarray
    f_val: float
    g_val: float
    exit_kind: ExitKind
    outer_iterations: int
    total_queries: QueryCounter
    l: float
    u: float
    l0: float
    u0: float
    Delta1: float
    schedule: ToleranceSchedule
    trace: list[TraceRow]
    f_gap: float | None = None
    g_gap: float | None = None
    interval_calls: list[int] = field(default_factory=list)
    interval_caps: list[int] = field(default_factory=list)
    lower_levels: list[float] = field(default_factory=list)
    seconds: float = 0.0

    def summary(self) -> dict:
        return {
            "exit_kind": self.exit_kind.value,
            "f_val": self.f_val,
            "g_val": self.g_val,
            "f_gap": self.f_gap,
            "g_gap": self.g_gap,
            "outer_iterations": self.outer_iterations,
            "total_queries": self.total_queries.as_dict(),
            "l": self.l,
            "u": self.u,
            "l0": self.l0,
            "u0": self.u0,
            "Delta1": self.Delta1,
            "schedule": self.schedule.as_dict(),
            "seconds": self.seconds,
            "x_final": [float(v) for v in self.x_final],
        }


def initial_bounds(instance: BilevelInstance, cfg: OuterConfig, x0_f, x0_g,
                   counter: QueryCounter) -> InitialBounds:
    """Approximate minimizers of ``f`` and ``g`` and the bracket ``[l0, u0]``.

    ``x_f`` minimizes ``f`` to accuracy ``eps_f/4`` and ``x_g`` minimizes
    ``g`` to accuracy ``eps_g/3``; then ``l0 = f(x_f) - eps_f/4`` and
    ``u0 = f(x_g)``. If ``x_f`` falls outside the domain of ``g`` (an
    indicator lower part), ``f`` is minimized again over that domain so that
    the anchor of the perturbed subproblems has finite ``g``; this can only
    raise ``l0``, which remains a lower bound on the bilevel optimum.
    """
    def run(obj, target, x0, label):
        fc = ApgConvexConfig(eps_obj=target, L0=cfg.fista_L0, eta=cfg.fista_eta,
                             max_iters=cfg.fista_max_iters)
        res = apg_convex(obj.smooth, obj.nonsmooth, fc, x0, counter)
        if not res.converged:
            raise NumericalFailure(f"minimization of {label} did not converge in {res.iterations} iterations")
        return res.x

    x_f = run(instance.upper, cfg.eps_f / 4.0, x0_f, "the upper objective")
    if not math.isfinite(evaluate(instance.lower, x_f, counter)):
        x_f = run(_upper_on_lower_domain(instance), cfg.eps_f / 4.0, x_f,
                  "the upper objective over the lower domain")
    x_g = run(instance.lower, cfg.eps_g / 3.0, x0_g, "the lower objective")
    f_xf = evaluate(instance.upper, x_f, counter)
    f_xg = evaluate(instance.upper, x_g, counter)
    g_xg = evaluate(instance.lower, x_g, counter)
    if not (math.isfinite(f_xf) and math.isfinite(f_xg) and math.isfinite(g_xg)):
        raise NumericalFailure(
            "initial bounds are not finite: the lower minimizer lies outside the domain of the "
            "upper objective (f(x_g) = inf); the level-set bisection needs a finite upper bound"
        )
    return InitialBounds(f_xf - cfg.eps_f / 4.0, f_xg, x_f, x_g, f_xf, f_xg, g_xg)


def _upper_on_lower_domain(instance: BilevelInstance) -> CompositeObjective:
    """``f`` plus the indicator of the domain of an indicator-type ``g2``."""
    g2 = instance.lower.nonsmooth
    if not g2.is_indicator:
        raise NumericalFailure(
            "the upper minimizer lies outside the domain of the lower objective and the lower "
            f"nonsmooth part ({g2.kind!r}) is not an indicator, so no anchor with finite g is known"
        )
    f2 = instance.upper.nonsmooth

    def value(x):
        return f2.value(x) if np.isfinite(g2.value(x)) else np.inf

    # for an indicator g2 the prox of t (g2 + f2) is the combined prox at z = 1
    ns = ProxOracle(f"{f2.kind}+dom", value, lambda y, t: instance.combined_prox(y, t, 1.0))
    return CompositeObjective(instance.upper.smooth, ns, instance.upper.nonsmooth_lipschitz)


def condition14(instance: BilevelInstance, x_c, x_tilde_g, eps_g: float,
                counter: QueryCounter | None = None, g_tilde_g: float | None = None) -> bool:
    """True when ``g(x_c) > g(x_g) + eps_g/3``, i.e. the level is a lower bound."""
    g_c = evaluate(instance.lower, x_c, counter)
    g_ref = g_tilde_g if g_tilde_g is not None else evaluate(instance.lower, x_tilde_g, counter)
    return g_c > g_ref + eps_g / 3.0


def _lipschitz_estimate(instance: BilevelInstance, x, counter: QueryCounter) -> float:
    counter.gradient_evals += 1
    return float(np.linalg.norm(instance.upper.smooth.gradient(x))) + float(instance.upper.nonsmooth_lipschitz)


def solve(instance: BilevelInstance, cfg: OuterConfig, x0_f=None, x0_g=None,
          reference=None, on_iteration: Callable[[TraceRow], None] | None = None,
          on_inner: Callable[[TraceRow], None] | None = None) -> SolveReport:
    """Solve the simple bilevel problem ``min f over argmin g``.

    Parameters
    ----------
    instance : BilevelInstance
        Upper and lower composite objectives.
    cfg : OuterConfig
        Tolerances and solver settings.
    x0_f, x0_g : array_like, optional
        Starting points of the two initial minimizations (zeros by default).
    reference : object, optional
        Anything with ``p_star`` and ``g_star`` attributes; enables gap
        columns in the trace and the report.
    on_iteration : callable, optional
        Receives every outer :class:`TraceRow` as it is produced.
    on_inner : callable, optional
        Receives a row with branch ``Inner`` after every fresh inner solve;
        its ``g_val`` is evaluated without being counted as a query.

    Returns
    -------
    SolveReport
        The final point, exit kind, bracket history and query counts. On
        ``Converged`` the final point satisfies ``f - p* <= eps_f`` and
        ``g - g* <= eps_g`` under the standing assumptions.
    """
    t_start = time.perf_counter()
    n = instance.n
    x0_f = np.zeros(n) if x0_f is None else np.asarray(x0_f, dtype=float)
    x0_g = np.zeros(n) if x0_g is None else np.asarray(x0_g, dtype=float)
    counter = QueryCounter()
    eps, eps_f, eps_g = cfg.eps, cfg.eps_f, cfg.eps_g

    ib = initial_bounds(instance, cfg, x0_f, x0_g, counter)
    l0, u0 = ib.l0, ib.u0
    delta1 = cfg.Delta1 if cfg.Delta1 is not None else 1e-3 * max(1.0, abs(u0 - l0))
    anchor = ib.x_f
    f_anchor = ib.f_of_xf
    g_gap_anchor = evaluate(instance.lower, anchor, counter) - ib.g_of_xg
    B_f = max(cfg.B_f or 0.0, _lipschitz_estimate(instance, ib.x_f, counter),
              _lipschitz_estimate(instance, ib.x_g, counter), 1.0)

    def schedule(c: float) -> ToleranceSchedule:
        return cfg.schedule(c, f_anchor, g_gap_anchor, delta1, B_f)

    if cfg.max_outer_iters is not None:
        max_outer = int(cfg.max_outer_iters)
    else:
        max_outer = 10 + max(0, math.ceil(math.log2(max(u0 - l0, eps_f) / eps_f)))

    p_star = getattr(reference, "p_star", None)
    g_star = getattr(reference, "g_star", None)

    def gaps(fv, gv):
        fg = None if p_star is None else fv - p_star
        gg = None if g_star is None else gv - g_star
        return fg, gg

    trace: list[TraceRow] = []
    interval_calls: list[int] = []
    interval_caps: list[int] = []
    lower_levels: list[float] = []

    state = {"k": 0, "c": 0.5 * (l0 + u0), "l": l0, "u": u0}

    def inner_listener(z, cert, f_val):
        gv = evaluate(instance.lower, cert.point)  # instrumentation only, not counted
        fg, gg = gaps(f_val, gv)
        on_inner(TraceRow(state["k"], counter.total, time.perf_counter() - t_start, state["c"],
                          state["l"], state["u"], Branch.INNER, f_val, gv, fg, gg))

    cache = None
    if cfg.reuse_inner_solves or on_inner is not None:
        cache = InnerSolveCache(cfg.reuse_inner_solves,
                                inner_listener if on_inner is not None else None)

    def search(c, x_start):
        state["c"] = c
        sched = schedule(c)
        sub = Subproblem(instance, c, eps, anchor)
        Z = interval_search(sub, sched, x_start, cfg.b_init, counter, cfg.inner, cache)
        interval_calls.append(Z.apg_calls)
        interval_caps.append(interval_search_cap(sched.D_z, cfg.b_init))
        return Z

    def record(row: TraceRow):
        trace.append(row)
        if on_iteration is not None:
            on_iteration(row)

    l, u = l0, u0
    x_u, f_u, g_u = ib.x_g, ib.f_of_xg, ib.g_of_xg
    x_hat = ib.x_f
    c = 0.5 * (l + u)
    Z: MultiplierInterval | None = None
    if u - l > 0.75 * eps_f and c - l0 >= delta1:
        Z = search(c, x_hat)
        if Z.x is not None:
            x_hat = Z.x

    exit_kind = ExitKind.CONVERGED
    k = 0
    while u - l > 0.75 * eps_f:
        if k >= max_outer:
            exit_kind = ExitKind.ITERATION_CAP
            break
        k += 1
        c = 0.5 * (l + u)
        if c - l0 < delta1:
            exit_kind = ExitKind.SAFEGUARD
            fg, gg = gaps(f_u, g_u)
            record(TraceRow(k, counter.total, time.perf_counter() - t_start, u, l, u,
                            Branch.SAFEGUARD, f_u, g_u, fg, gg))
            break
        state.update(k=k, c=c, l=l, u=u)
        sub = Subproblem(instance, c, eps, anchor)
        if Z is None:
            Z = search(c, x_hat)
        res: SubproblemResult = dual_bisection(sub, Z, schedule(c), counter, x_hat, cfg.inner, cache)
        x_hat = res.x
        if res.g_val > ib.g_of_xg + eps_g / 3.0:
            branch = Branch.LOWER
            l = c
            lower_levels.append(c)
            Z = Z.widened_from_zero()
        else:
            branch = Branch.UPPER
            u = min(u, res.f_val)
            x_u, f_u, g_u = res.x, res.f_val, res.g_val
            c_next = 0.5 * (l + u)
            state.update(l=l, u=u)
            Z = search(c_next, x_hat) if (u - l > 0.75 * eps_f and c_next - l0 >= delta1) else None
        B_f = max(B_f, _lipschitz_estimate(instance, res.x, counter))
        fg, gg = gaps(res.f_val, res.g_val)
        record(TraceRow(k, counter.total, time.perf_counter() - t_start, c, l, u, branch,
                        res.f_val, res.g_val, fg, gg))

    fg, gg = gaps(f_u, g_u)
    return SolveReport(
        x_final=x_u, f_val=f_u, g_val=g_u, exit_kind=exit_kind, outer_iterations=k,
        total_queries=counter.snapshot(), l=l, u=u, l0=l0, u0=u0, Delta1=delta1,
        schedule=schedule(u), trace=trace, f_gap=fg, g_gap=gg, interval_calls=interval_calls,
        interval_caps=interval_caps, lower_levels=lower_levels,
        seconds=time.perf_counter() - t_start,
    )
