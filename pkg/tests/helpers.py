"""Independent oracles and small instances shared by the test modules."""

import numpy as np

from bivfa.composite import (BilevelInstance, CompositeObjective, SmoothOracle,
                             make_least_squares)
from bivfa.prox import project_l1_ball, project_l2_ball, zero_function


def dykstra_l1_l2(y, r1, r2, iters=20000, tol=1e-14):
    """Projection onto the l1/l2 ball intersection by Dykstra's alternating projections."""
    x = np.asarray(y, dtype=float).copy()
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(iters):
        u = project_l2_ball(x + p, r2)
        p = x + p - u
        x_new = project_l1_ball(u + q, r1)
        q = u + q - x_new
        if np.linalg.norm(x_new - x) <= tol:
            x = x_new
            break
        x = x_new
    return x


def ball_qp(a=(3.0, 4.0), p=(0.0, 0.0)) -> BilevelInstance:
    """``g = 0.5||x - a||^2`` below and ``f = 0.5||x - p||^2`` above.

    With anchor ``p`` and perturbation ``mu`` the inner minimizer is
    ``x(z) = (a + mu p + z p) / (1 + mu + z)``.
    """
    a = np.asarray(a, dtype=float)
    p = np.asarray(p, dtype=float)
    n = a.size
    upper = CompositeObjective(make_least_squares(np.eye(n), p), zero_function())
    lower = CompositeObjective(make_least_squares(np.eye(n), a), zero_function())
    return BilevelInstance(upper, lower, n, name="ball-qp")


def quadratic(H, c=None) -> SmoothOracle:
    """``0.5 x^T H x - c^T x`` with exact Lipschitz and strong convexity constants."""
    H = np.asarray(H, dtype=float)
    c = np.zeros(H.shape[0]) if c is None else np.asarray(c, dtype=float)
    w = np.linalg.eigvalsh(H)
    return SmoothOracle(lambda x: 0.5 * x @ H @ x - c @ x, lambda x: H @ x - c,
                        lipschitz_hint=float(w[-1]), strong_convexity=float(max(w[0], 0.0)))


def fd_gradient(fun, x, h=1e-6):
    """Central finite-difference gradient."""
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def tiny_instance(seed: int) -> BilevelInstance:
    """Random 2-4 dimensional instance with a rank-deficient lower problem.

    The pair of nonsmooth parts cycles through the registered rules
    (zero/zero, nonneg/zero, zero/l1, l1 ball/l2 ball); the domain of
    the lower part always lies inside the domain of the upper part.
    """
    from bivfa.prox import l1_ball_indicator, l1_norm, l2_ball_indicator, nonneg_indicator

    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    A_g = rng.normal(size=(n - 1, n))  # fewer rows than columns: many lower minimizers
    b_g = rng.normal(size=n - 1)
    A_f = rng.normal(size=(n + 1, n))
    b_f = rng.normal(size=n + 1)
    kind = seed % 4
    if kind == 0:
        g2, f2 = zero_function(), zero_function()
    elif kind == 1:
        g2, f2 = nonneg_indicator(), zero_function()
        b_g = A_g @ np.abs(rng.normal(size=n))  # a nonnegative exact solution exists
    elif kind == 2:
        g2, f2 = zero_function(), l1_norm(0.5)
    else:
        g2, f2 = l1_ball_indicator(3.0), l2_ball_indicator(3.0)  # dom g inside dom f
    upper = CompositeObjective(make_least_squares(A_f, b_f), f2,
                               0.5 * np.sqrt(n) if kind == 2 else 0.0)
    lower = CompositeObjective(make_least_squares(A_g, b_g), g2)
    return BilevelInstance(upper, lower, n, name=f"tiny-{seed}")


def level_setup(instance: BilevelInstance, eps: float, frac: float = 0.5):
    """Anchor, level and schedule at ``c = l0 + frac (u0 - l0)`` as the solver builds them."""
    from bivfa.composite import QueryCounter
    from bivfa.dual import Subproblem
    from bivfa.solver import OuterConfig, initial_bounds

    cfg = OuterConfig(eps=eps)
    counter = QueryCounter()
    z0 = np.zeros(instance.n)
    ib = initial_bounds(instance, cfg, z0, z0, counter)
    c = ib.l0 + frac * (ib.u0 - ib.l0)
    delta1 = 1e-3 * max(1.0, abs(ib.u0 - ib.l0))
    grad = instance.upper.smooth.gradient
    B_f = max(float(np.linalg.norm(grad(ib.x_f))), float(np.linalg.norm(grad(ib.x_g))), 1.0) \
        + instance.upper.nonsmooth_lipschitz
    sched = cfg.schedule(c, ib.f_of_xf, instance.g(ib.x_f) - ib.g_of_xg, delta1, B_f)
    return Subproblem(instance, c, eps, ib.x_f), sched, ib


def safeguard_instance(gap: float = 1e-3, seed: int = 3):
    """Instance with ``p* - f* = gap`` and a wide initial bracket.

    The lower problem is an underdetermined least-squares fit; the upper
    objective ``0.5||x - q||^2`` has ``q`` at distance ``sqrt(2 gap)`` from
    the lower solution set along the row space of the lower matrix. Returns
    ``(instance, p_star, g_star)``, both values in closed form (``f* = 0``).
    """
    import scipy.linalg as sl

    rng = np.random.default_rng(seed)
    n = 6
    A = rng.normal(size=(4, n))
    b = rng.normal(size=4)
    x_mn = np.linalg.pinv(A) @ b
    N = sl.null_space(A)
    r = sl.orth(A.T)[:, 0]
    q = x_mn + N @ np.array([2.0, -1.0]) + np.sqrt(2 * gap) * r
    g_star = 0.5 * float(np.sum((A @ x_mn - b) ** 2))
    upper = CompositeObjective(make_least_squares(np.eye(n), q), zero_function())
    lower = CompositeObjective(make_least_squares(A, b), zero_function())
    return BilevelInstance(upper, lower, n, name="safeguard"), gap, g_star
