"""Synthetic test families and an independent reference oracle.

Three families are generated deterministically from a seed:

``IEP``
    Ill-posed inverse problem: minimize ``x^T Q x`` (``Q = L^T L + I`` with
    ``L`` the first-difference matrix) over the nonnegative least-squares
    solutions of ``A x = b``, where ``A`` has an exactly known spectrum
    with ``rank_deficiency`` zero singular values.
``LRP``
    Linear regression with duplicated (co-linear) columns: minimize the
    validation loss plus ``||x||_1`` over the minimizers of the training
    loss.
``LRPBC``
    The same data with ball constraints instead of the l1 penalty: the
    lower problem lives in an l1 ball and the upper one in an l2 ball.

Every instance is described by an :class:`InstanceData` record (named
matrices plus the kind of each objective part), which is also the unit of
CSV import and export.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .composite import (BilevelInstance, CompositeObjective, make_least_squares,
                        make_quadratic_form, make_zero_smooth)
from .errors import ConfigurationError, ReferenceUnavailableError
from .prox import (l1_ball_indicator, l1_norm, l2_ball_indicator, nonneg_indicator,
                   zero_function)

__all__ = [
    "FAMILIES",
    "InstanceSpec",
    "InstanceData",
    "ReferenceValues",
    "generate_data",
    "build_instance",
    "generate",
    "first_difference",
    "reference_solve",
]

FAMILIES = ("IEP", "LRP", "LRPBC", "Custom")
SMOOTH_KINDS = ("least_squares", "quadratic", "zero")
NONSMOOTH_KINDS = ("zero", "l1", "nonneg", "l1_ball", "l2_ball")


@dataclass(frozen=True)
class InstanceSpec:
    """Parameters of a generated instance.

    Attributes
    ----------
    family : str
        One of ``IEP``, ``LRP``, ``LRPBC``.
    n : int
        Dimension of the decision variable.
    m : int or None
        Number of rows (IEP: rows of ``A``, default ``n``; LRP/LRPBC: total
        samples before the 60/40 split, default ``max(2n, 50)``).
    rank_deficiency : int
        IEP: number of zero singular values of ``A``. LRP/LRPBC: number of
        duplicated columns.
    noise_sigma : float or None
        IEP: noise added to ``b`` (default 0). LRP/LRPBC: noise added to the
        validation block (default 0.2).
    seed : int
        Seed of the random generator; fully determines the instance.
    r1, r2 : float
        Radii of the l1 (lower) and l2 (upper) balls of ``LRPBC``.
    """

    family: str
    n: int
    m: int | None = None
    rank_deficiency: int = 0
    noise_sigma: float | None = None
    seed: int = 0
    r1: float = 10.0
    r2: float = 5.0

    def __post_init__(self):
        if self.family not in FAMILIES[:3]:
            raise ConfigurationError(f"unknown family {self.family!r}; expected one of {FAMILIES[:3]}")
        if int(self.n) < 1:
            raise ConfigurationError(f"n must be positive, got {self.n}")
        rows = self.rows
        if rows < 1:
            raise ConfigurationError(f"m must be positive, got {rows}")
        if not 0 <= int(self.rank_deficiency) < min(rows, self.n):
            raise ConfigurationError(
                f"rank_deficiency must lie in [0, min(m, n)) = [0, {min(rows, self.n)}), "
                f"got {self.rank_deficiency}"
            )
        if self.noise_sigma is not None and not (self.noise_sigma >= 0 and math.isfinite(self.noise_sigma)):
            raise ConfigurationError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")
        if not (self.r1 > 0 and self.r2 > 0):
            raise ConfigurationError("ball radii must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        if self.family != "IEP" and self.rows_train < self.n - self.rank_deficiency:
            raise ConfigurationError("too few training rows for the requested rank")

    @property
    def rows(self) -> int:
        if self.m is not None:
            return int(self.m)
        return int(self.n) if self.family == "IEP" else max(2 * int(self.n), 50)

    @property
    def rows_train(self) -> int:
        return int(round(0.6 * self.rows))

    @property
    def sigma(self) -> float:
        if self.noise_sigma is not None:
            return float(self.noise_sigma)
        return 0.0 if self.family == "IEP" else 0.2

    def as_dict(self) -> dict:
        return {"family": self.family, "n": int(self.n), "m": self.rows,
                "rank_deficiency": int(self.rank_deficiency), "noise_sigma": self.sigma,
                "seed": int(self.seed), "r1": float(self.r1), "r2": float(self.r2)}


@dataclass
class InstanceData:
    """Raw matrices of an instance and the kinds of its four parts.

    Matrix names: ``upper_A``/``upper_b`` or ``upper_Q`` for the upper smooth
    part, and likewise with the ``lower_`` prefix. ``params`` holds
    ``upper_l1_weight``, ``upper_radius``, ``lower_radius`` as needed.
    """

    family: str
    matrices: dict[str, np.ndarray]
    upper_smooth: str
    upper_nonsmooth: str
    lower_smooth: str
    lower_nonsmooth: str
    params: dict = field(default_factory=dict)
    spec: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        for key in ("upper_Q", "upper_A", "lower_Q", "lower_A"):
            if key in self.matrices:
                return int(self.matrices[key].shape[1])
        if "n" in self.params:
            return int(self.params["n"])
        raise ConfigurationError("cannot infer the dimension: no matrix present")


@dataclass(frozen=True)
class ReferenceValues:
    """High-accuracy optimal values computed independently of the solver.

    ``p_star`` is the optimal upper value over the lower solutions relaxed
    by ``relaxation`` (``g(x) <= g* + relaxation``).
    """

    g_star: float
    f_star: float
    p_star: float
    x_ref: np.ndarray
    tolerance_achieved: float
    relaxation: float = 1e-10

    def as_dict(self) -> dict:
        return {"g_star": self.g_star, "f_star": self.f_star, "p_star": self.p_star,
                "tolerance_achieved": self.tolerance_achieved, "relaxation": self.relaxation,
                "x_ref": [float(v) for v in self.x_ref]}


def first_difference(n: int) -> np.ndarray:
    """The ``(n-1) x n`` bidiagonal first-difference matrix."""
    L = np.zeros((max(n - 1, 0), n))
    idx = np.arange(n - 1)
    L[idx, idx] = -1.0
    L[idx, idx + 1] = 1.0
    return L


def _orthogonal(rng: np.random.Generator, k: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.sign(np.diag(r))


def _iep(spec: InstanceSpec, rng: np.random.Generator) -> InstanceData:
    n, m, k0 = int(spec.n), spec.rows, int(spec.rank_deficiency)
    r = min(m, n) - k0
    U, V = _orthogonal(rng, m), _orthogonal(rng, n)
    s = np.zeros(min(m, n))
    # singular values 1 ... 1e-3, so the lower Hessian A^T A has spectrum 1 ... 1e-6 plus k0 zeros
    s[:r] = np.geomspace(1.0, 1e-3, r) if r > 1 else 1.0
    A = (U[:, : s.size] * s) @ V[:, : s.size].T
    # A nonnegative bump profile, normalized to unit length.
    t = np.linspace(-6.0, 6.0, n)
    x_true = np.where(np.abs(t) < 3.0, 1.0 + np.cos(np.pi * t / 3.0), 0.0)
    if not np.any(x_true > 0):
        x_true = np.ones(n)
    x_true /= np.linalg.norm(x_true)
    b = A @ x_true + spec.sigma * rng.standard_normal(m)
    L = first_difference(n)
    Q = L.T @ L + np.eye(n)
    return InstanceData("IEP", {"upper_Q": Q, "lower_A": A, "lower_b": b, "x_true": x_true},
                        "quadratic", "zero", "least_squares", "nonneg", {}, spec.as_dict())


def _regression_data(spec: InstanceSpec, rng: np.random.Generator, ball_scale: bool):
    n, rows, dup = int(spec.n), spec.rows, int(spec.rank_deficiency)
    p = n - dup
    raw = rng.standard_normal((rows, p))
    lo, hi = raw.min(axis=0), raw.max(axis=0)
    base = (raw - lo) / np.where(hi > lo, hi - lo, 1.0)
    src = rng.choice(p, size=dup, replace=dup > p)
    factors = rng.uniform(0.5, 2.0, size=dup)
    X = np.hstack([base, base[:, src] * factors])
    perm = rng.permutation(n)
    X = X[:, perm]
    w = rng.standard_normal(p) / math.sqrt(p)
    if ball_scale:
        w *= 1.2 * spec.r1 / np.abs(w).sum()
    y = base @ w + 0.1 * rng.standard_normal(rows)
    X /= math.sqrt(rows)
    y /= math.sqrt(rows)
    ntr = spec.rows_train
    A_tr, b_tr = X[:ntr], y[:ntr]
    scale = spec.sigma / math.sqrt(rows)
    A_val = X[ntr:] + scale * rng.standard_normal(X[ntr:].shape)
    b_val = y[ntr:] + scale * rng.standard_normal(rows - ntr)
    return {"upper_A": A_val, "upper_b": b_val, "lower_A": A_tr, "lower_b": b_tr}


def generate_data(spec: InstanceSpec) -> InstanceData:
    """Deterministically generate the raw matrices of an instance."""
    rng = np.random.default_rng(int(spec.seed))
    if spec.family == "IEP":
        return _iep(spec, rng)
    if spec.family == "LRP":
        mats = _regression_data(spec, rng, ball_scale=False)
        return InstanceData("LRP", mats, "least_squares", "l1", "least_squares", "zero",
                            {"upper_l1_weight": 1.0}, spec.as_dict())
    mats = _regression_data(spec, rng, ball_scale=True)
    return InstanceData("LRPBC", mats, "least_squares", "l2_ball", "least_squares", "l1_ball",
                        {"upper_radius": float(spec.r2), "lower_radius": float(spec.r1)},
                        spec.as_dict())


def _smooth(data: InstanceData, side: str):
    kind = getattr(data, f"{side}_smooth")
    mats = data.matrices
    if kind == "least_squares":
        try:
            return make_least_squares(mats[f"{side}_A"], mats[f"{side}_b"])
        except KeyError as exc:
            raise ConfigurationError(f"missing matrix {exc.args[0]!r} for {side} least squares") from None
    if kind == "quadratic":
        if f"{side}_Q" not in mats:
            raise ConfigurationError(f"missing matrix '{side}_Q' for {side} quadratic form")
        return make_quadratic_form(mats[f"{side}_Q"])
    if kind == "zero":
        return make_zero_smooth()
    raise ConfigurationError(f"unknown smooth kind {kind!r}; expected one of {SMOOTH_KINDS}")


def _nonsmooth(data: InstanceData, side: str, n: int):
    kind = getattr(data, f"{side}_nonsmooth")
    params = data.params
    if kind == "zero":
        return zero_function(), 0.0
    if kind == "l1":
        w = float(params.get(f"{side}_l1_weight", 1.0))
        return l1_norm(w), w * math.sqrt(n)
    if kind == "nonneg":
        return nonneg_indicator(), 0.0
    if kind == "l1_ball":
        return l1_ball_indicator(float(params[f"{side}_radius"])), 0.0
    if kind == "l2_ball":
        return l2_ball_indicator(float(params[f"{side}_radius"])), 0.0
    raise ConfigurationError(f"unknown nonsmooth kind {kind!r}; expected one of {NONSMOOTH_KINDS}")


def build_instance(data: InstanceData, name: str | None = None) -> BilevelInstance:
    """Assemble a :class:`BilevelInstance` from raw data."""
    n = data.n
    for key, mat in data.matrices.items():
        if key.endswith("_A") or key.endswith("_Q"):
            if mat.ndim != 2 or mat.shape[1] != n:
                raise ConfigurationError(f"matrix {key} has shape {mat.shape}, expected (*, {n})")
    parts = {}
    for side in ("upper", "lower"):
        ns, lip = _nonsmooth(data, side, n)
        parts[side] = CompositeObjective(_smooth(data, side), ns, lip)
    meta = {"family": data.family, **data.spec}
    return BilevelInstance(parts["upper"], parts["lower"], n, name or data.family, meta)


def generate(spec: InstanceSpec) -> BilevelInstance:
    """Generate the instance described by ``spec``."""
    return build_instance(generate_data(spec))


# ---------------------------------------------------------------------------
# Reference oracle (interior-point solves through cvxpy, independent of the
# first-order machinery of this package).

def _cvx_smooth(data: InstanceData, side: str, x, variant: int = 0):
    """cvxpy expression of the smooth part.

    Variant 0 writes quadratic forms as sums of squares; variant 1 uses
    ``quad_form``, an equivalent model that the solver scales differently.
    """
    import cvxpy as cp

    mats = data.matrices
    kind = getattr(data, f"{side}_smooth")
    if kind == "least_squares":
        return 0.5 * cp.sum_squares(mats[f"{side}_A"] @ x - mats[f"{side}_b"])
    if kind == "quadratic":
        Q = 0.5 * (mats[f"{side}_Q"] + mats[f"{side}_Q"].T)
        if variant:
            return cp.quad_form(x, cp.psd_wrap(Q))
        w, V = np.linalg.eigh(Q)
        R = (V * np.sqrt(np.maximum(w, 0.0))).T
        return cp.sum_squares(R @ x)
    return cp.Constant(0.0)


def _cvx_nonsmooth(data: InstanceData, side: str, x):
    """Penalty expression and constraint list of the nonsmooth part."""
    import cvxpy as cp

    params = data.params
    ns = getattr(data, f"{side}_nonsmooth")
    if ns == "l1":
        return float(params.get(f"{side}_l1_weight", 1.0)) * cp.norm1(x), []
    if ns == "nonneg":
        return None, [x >= 0]
    if ns == "l1_ball":
        return None, [cp.norm1(x) <= float(params[f"{side}_radius"])]
    if ns == "l2_ball":
        return None, [cp.norm2(x) <= float(params[f"{side}_radius"])]
    return None, []


def _cvx_parts(data: InstanceData, side: str, x, variant: int = 0):
    smooth = _cvx_smooth(data, side, x, variant)
    pen, cons = _cvx_nonsmooth(data, side, x)
    return (smooth if pen is None else smooth + pen), cons


def _cvx_level_constraint(data: InstanceData, x, level: float, variant: int = 0):
    """``g(x) <= level``, as a second-order cone when g is a plain residual.

    Variant 1 divides the cone by its radius, so that the solver sees a
    differently scaled but equivalent constraint.
    """
    import cvxpy as cp

    pen, cons = _cvx_nonsmooth(data, "lower", x)
    if data.lower_smooth == "least_squares" and pen is None:
        A, b = data.matrices["lower_A"], data.matrices["lower_b"]
        radius = math.sqrt(2.0 * max(level, 0.0))
        if variant and radius > 0:
            return cons + [cp.norm2((A @ x - b) / radius) <= 1.0]
        return cons + [cp.norm2(A @ x - b) <= radius]
    smooth = _cvx_smooth(data, "lower", x, variant)
    expr = smooth if pen is None else smooth + pen
    return cons + [expr <= level]


def _solve_cvx(objective, constraints, solver: str):
    import cvxpy as cp

    prob = cp.Problem(cp.Minimize(objective), constraints)
    opts = {}
    if solver == "CLARABEL":
        opts = dict(tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10, max_iter=500)
    elif solver == "CVXOPT":
        opts = dict(abstol=1e-10, reltol=1e-10, feastol=1e-10, max_iters=500)
    try:
        with warnings.catch_warnings():
            # accuracy is judged by comparing two models, not by the solver's own flag
            warnings.filterwarnings("ignore", message="Solution may be inaccurate")
            prob.solve(solver=solver, **opts)
    except cp.error.SolverError as exc:
        raise ReferenceUnavailableError(f"{solver} failed: {exc}") from exc
    if prob.status not in ("optimal", "optimal_inaccurate") or prob.value is None:
        raise ReferenceUnavailableError(f"{solver} returned status {prob.status!r}")
    return prob


def _least_squares_value(A, b, x):
    r = A @ x - b
    return 0.5 * float(r @ r)


def _g_star(data: InstanceData, solver: str) -> tuple[float, np.ndarray]:
    mats = data.matrices
    if data.lower_smooth == "least_squares" and data.lower_nonsmooth == "zero":
        A, b = mats["lower_A"], mats["lower_b"]
        x = np.linalg.pinv(A, rcond=1e-13) @ b
        return _least_squares_value(A, b, x), x
    if data.lower_smooth == "least_squares" and data.lower_nonsmooth == "nonneg":
        from scipy.optimize import nnls

        A, b = mats["lower_A"], mats["lower_b"]
        x, _ = nnls(A, b, maxiter=50 * A.shape[1])
        return _least_squares_value(A, b, x), x
    import cvxpy as cp

    x = cp.Variable(data.n)
    obj, cons = _cvx_parts(data, "lower", x)
    prob = _solve_cvx(obj, cons, solver)
    return float(prob.value), np.asarray(x.value, dtype=float)


def _relaxed_upper_solve(data: InstanceData, level: float, solver: str, variant: int):
    import cvxpy as cp

    if data.lower_smooth == "least_squares" and data.lower_nonsmooth == "zero":
        return _relaxed_upper_solve_ls(data, level, solver, variant)
    x = cp.Variable(data.n)
    f_obj, f_cons = _cvx_parts(data, "upper", x, variant)
    _solve_cvx(f_obj, f_cons + _cvx_level_constraint(data, x, level, variant), solver)
    return np.asarray(x.value, dtype=float)


def reference_solve(data: InstanceData, tol: float = 1e-10, relaxation: float = 1e-10,
                    solver: str = "CLARABEL") -> ReferenceValues:
    """Compute ``g*``, ``f*`` and the relaxed bilevel value ``p*``.

    ``g*`` comes from a closed form (pseudo-inverse for plain least
    squares, active-set NNLS for the nonnegative case) or an interior-point
    solve; ``f*`` from an interior-point solve; ``p*`` from the
    interior-point solve of ``min f(x)`` subject to the lower constraints
    and ``g(x) <= g* + relaxation``.

    The relaxed problem is solved twice with two equivalent conic models
    (different scaling of the quadratic terms). The achieved tolerance is
    the larger of the spread between the two optimal values and the
    violation of the relaxed level constraint at the returned point; a
    value above ``tol`` (or any solver failure) raises
    :class:`ReferenceUnavailableError`.
    """
    try:
        import cvxpy as cp
    except ImportError as exc:  # pragma: no cover - exercised only without cvxpy
        raise ReferenceUnavailableError("the reference oracle needs the optional cvxpy dependency") from exc

    n = data.n
    g_star, _ = _g_star(data, solver)

    x = cp.Variable(n)
    f_obj, f_cons = _cvx_parts(data, "upper", x)
    f_star = float(_solve_cvx(f_obj, f_cons, solver).value)

    inst = build_instance(data)
    level = g_star + relaxation
    x_ref = _relaxed_upper_solve(data, level, solver, 0)
    x_alt = _relaxed_upper_solve(data, level, solver, 1)
    f_ref, f_alt = inst.f(x_ref), inst.f(x_alt)
    g_ref = inst.g(x_ref)
    if not (math.isfinite(g_ref) and math.isfinite(f_ref) and math.isfinite(f_alt)):
        raise ReferenceUnavailableError("reference point is infeasible for the nonsmooth parts")
    violation = max(0.0, g_ref - level, inst.g(x_alt) - level)
    achieved = max(violation, abs(f_ref - f_alt))
    if achieved > tol:
        raise ReferenceUnavailableError(
            f"reference accuracy {achieved:.3e} above requested tolerance {tol:.3e} "
            f"(solver {solver}; the two conic models give {f_ref!r} and {f_alt!r})"
        )
    return ReferenceValues(g_star, f_star, f_ref, x_ref, achieved, relaxation)


def _relaxed_upper_solve_ls(data: InstanceData, level: float, solver: str, variant: int):
    """Relaxed bilevel solve when the lower problem is plain least squares.

    With ``A = U S V^T`` and ``x_ls`` the minimum-norm solution, every point
    is ``x = x_ls + V_r w + V_0 y`` and ``g(x) = g(x_ls) + ||S_r w||^2 / 2``,
    so ``g(x) <= level`` is the ball ``||S_r w|| <= rho``. The level set is
    parametrized by ``S_r w = rho u`` with ``||u|| <= 1`` (variant 0) or by
    ``w`` itself (variant 1); either way the thin slab around the affine
    solution set is never handed to the solver as a near-degenerate cone.
    """
    import cvxpy as cp

    A, b = data.matrices["lower_A"], data.matrices["lower_b"]
    U, sv, Vt = np.linalg.svd(A, full_matrices=True)
    r = int(np.sum(sv > 1e-12 * max(sv[0], 1e-300)))
    V_r, V_0 = Vt[:r].T, Vt[r:].T
    x_ls = V_r @ ((U[:, :r].T @ b) / sv[:r])
    g_ls = _least_squares_value(A, b, x_ls)
    rho = math.sqrt(2.0 * max(level - g_ls, 0.0))
    y = cp.Variable(V_0.shape[1]) if V_0.shape[1] else None
    if variant == 0:
        u = cp.Variable(r)
        x = x_ls + V_r @ cp.multiply(rho / sv[:r], u)
        cons = [cp.norm2(u) <= 1.0]
    else:
        w = cp.Variable(r)
        x = x_ls + V_r @ w
        cons = [cp.norm2(cp.multiply(sv[:r], w)) <= rho]
    if y is not None:
        x = x + V_0 @ y
    f_obj, f_cons = _cvx_parts(data, "upper", x, variant)
    _solve_cvx(f_obj, f_cons + cons, solver)
    return np.asarray(x.value, dtype=float)
