import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bivfa.errors import ConfigurationError, InputDomainError, UnsupportedInstanceError
from bivfa.prox import (ProxOracle, combined_prox, l1_ball_indicator, l1_norm,
                        l2_ball_indicator, nonneg_indicator, project_l1_ball,
                        project_l1_l2_intersection, project_l2_ball, project_nonneg,
                        registered_pairs, soft_threshold, zero_function)
from helpers import dykstra_l1_l2

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
radii = st.floats(0.05, 20.0)
steps = st.floats(1e-3, 10.0)


def vectors(max_n=10):
    return st.integers(1, max_n).flatmap(lambda n: arrays(np.float64, n, elements=finite))


def vector_pairs(max_n=10):
    return st.integers(1, max_n).flatmap(
        lambda n: st.tuples(arrays(np.float64, n, elements=finite), arrays(np.float64, n, elements=finite)))


# Operators under test, each as (name, psi, prox(y, t)).
def operators(r1=1.5, r2=0.9, w=0.7):
    l1b, l2b = l1_ball_indicator(r1), l2_ball_indicator(r2)
    return [
        ("zero", zero_function()),
        ("l1", l1_norm(w)),
        ("nonneg", nonneg_indicator()),
        ("l1_ball", l1b),
        ("l2_ball", l2b),
        ("l1_l2", ProxOracle("l1_l2", lambda x: l1b.value(x) + l2b.value(x),
                             lambda y, t: combined_prox(y, t, 1.0, l1b, l2b))),
    ]


OPS = operators()
PROJECTIONS = [op for op in OPS if op[0] in ("nonneg", "l1_ball", "l2_ball", "l1_l2")]


class TestClosedForms:
    def test_soft_threshold_examples(self):
        np.testing.assert_array_equal(soft_threshold([3.0, -0.5, 0.0], 1.0), [2.0, 0.0, 0.0])
        np.testing.assert_array_equal(soft_threshold([0.0, 0.0], 5.0), [0.0, 0.0])

    def test_soft_threshold_grid_oracle(self):
        y, t = np.array([1.7, -2.2]), 0.2
        grid = np.arange(-3.0, 3.0, 1e-4)
        # separable objective, so a per-coordinate grid search is the brute-force minimizer
        expected = [grid[np.argmin(t * np.abs(grid) + 0.5 * (grid - yi) ** 2)] for yi in y]
        np.testing.assert_allclose(soft_threshold(y, t), expected, atol=1e-3)

    def test_nonneg_examples(self):
        np.testing.assert_array_equal(project_nonneg([-1.0, 2.0]), [0.0, 2.0])
        np.testing.assert_array_equal(project_nonneg([0.0, 0.0]), [0.0, 0.0])

    def test_nonneg_coordinate_oracle(self, rng):
        y = rng.normal(size=5)
        expected = [yi if yi > 0 else 0.0 for yi in y]
        np.testing.assert_array_equal(project_nonneg(y), expected)

    def test_l2_ball_examples(self):
        np.testing.assert_array_equal(project_l2_ball([3.0, 4.0], 5.0), [3.0, 4.0])
        np.testing.assert_allclose(project_l2_ball([6.0, 8.0], 5.0), [3.0, 4.0], rtol=1e-15)
        np.testing.assert_array_equal(project_l2_ball([0.0, 0.0], 1.0), [0.0, 0.0])

    def test_l1_ball_examples(self):
        np.testing.assert_array_equal(project_l1_ball([0.5, 0.2], 1.0), [0.5, 0.2])
        np.testing.assert_allclose(project_l1_ball([2.0, 0.0], 1.0), [1.0, 0.0])

    def test_l1_ball_active_set_oracle(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 5))
            y = rng.normal(size=n) * 3
            r = float(rng.uniform(0.1, 0.9)) * np.abs(y).sum()
            np.testing.assert_allclose(project_l1_ball(y, r), l1_ball_enumeration(y, r), atol=1e-12)

    def test_intersection_examples(self):
        np.testing.assert_array_equal(project_l1_l2_intersection([0.1, -0.2], 1.0, 1.0), [0.1, -0.2])
        np.testing.assert_allclose(project_l1_l2_intersection([6.0, 8.0], 100.0, 5.0), [3.0, 4.0])

    def test_intersection_dykstra_oracle(self, rng):
        for _ in range(50):
            y = rng.normal(size=3) * 2
            np.testing.assert_allclose(project_l1_l2_intersection(y, 1.0, 0.8),
                                       dykstra_l1_l2(y, 1.0, 0.8), atol=1e-6)

    def test_intersection_reduces_to_l1_when_l2_inactive(self, rng):
        y = rng.normal(size=6) * 3
        np.testing.assert_allclose(project_l1_l2_intersection(y, 1.0, 100.0), project_l1_ball(y, 1.0),
                                   atol=1e-12)

    @pytest.mark.parametrize("bad", [0.0, -1.0, np.inf, np.nan])
    def test_bad_radius(self, bad):
        with pytest.raises(ConfigurationError):
            project_l2_ball([1.0], bad)
        with pytest.raises(ConfigurationError):
            project_l1_ball([1.0], bad)
        with pytest.raises(ConfigurationError):
            project_l1_l2_intersection([1.0], 1.0, bad)

    @pytest.mark.parametrize("fn", [lambda y: soft_threshold(y, 1.0), project_nonneg,
                                    lambda y: project_l1_ball(y, 1.0)])
    def test_nonfinite_input(self, fn):
        with pytest.raises(InputDomainError):
            fn([1.0, np.nan])
        with pytest.raises(InputDomainError):
            fn([np.inf, 0.0])

    def test_bad_step(self):
        with pytest.raises(ConfigurationError):
            soft_threshold([1.0], 0.0)
        with pytest.raises(ConfigurationError):
            l1_norm().prox(np.ones(2), -1.0)

    def test_inputs_not_modified(self):
        y = np.array([3.0, -4.0])
        for _, op in OPS:
            op.prox(y, 0.5)
        np.testing.assert_array_equal(y, [3.0, -4.0])


class TestCombinedProx:
    def test_nonneg_zero_is_projection_for_every_z(self, rng):
        y = rng.normal(size=4)
        for z in (0.0, 0.3, 7.0):
            for t in (0.1, 2.0):
                np.testing.assert_array_equal(
                    combined_prox(y, t, z, nonneg_indicator(), zero_function()), project_nonneg(y))

    def test_zero_l1_is_soft_threshold(self, rng):
        y = rng.normal(size=4)
        np.testing.assert_allclose(combined_prox(y, 0.5, 2.0, zero_function(), l1_norm(1.0)),
                                   soft_threshold(y, 1.0))
        np.testing.assert_array_equal(combined_prox(y, 0.5, 0.0, zero_function(), l1_norm(1.0)), y)

    def test_balls(self, rng):
        y = rng.normal(size=5) * 4
        lo, up = l1_ball_indicator(2.0), l2_ball_indicator(1.0)
        np.testing.assert_allclose(combined_prox(y, 1.0, 0.5, lo, up), project_l1_l2_intersection(y, 2.0, 1.0))
        np.testing.assert_allclose(combined_prox(y, 1.0, 0.0, lo, up), project_l1_ball(y, 2.0))

    def test_zero_multiplier_agrees_with_lower_prox(self, rng):
        y = rng.normal(size=5) * 3
        for lower, upper in [(nonneg_indicator(), zero_function()), (zero_function(), l1_norm()),
                             (l1_ball_indicator(1.0), l2_ball_indicator(0.5)),
                             (l1_ball_indicator(1.0), zero_function())]:
            np.testing.assert_allclose(combined_prox(y, 0.7, 0.0, lower, upper), lower.prox(y, 0.7),
                                       atol=1e-10)

    def test_unregistered_pair(self):
        with pytest.raises(UnsupportedInstanceError, match="nonneg.*l1"):
            combined_prox(np.ones(2), 1.0, 1.0, nonneg_indicator(), l1_norm())

    def test_negative_multiplier(self):
        with pytest.raises(ConfigurationError):
            combined_prox(np.ones(2), 1.0, -1.0, zero_function(), zero_function())

    def test_registry_lists_the_experiment_pairs(self):
        pairs = registered_pairs()
        for pair in [("nonneg", "zero"), ("zero", "l1"), ("l1_ball", "l2_ball")]:
            assert pair in pairs


@pytest.mark.parametrize("name,op", OPS, ids=[o[0] for o in OPS])
class TestProxProperties:
    @settings(max_examples=200, deadline=None)
    @given(pair=vector_pairs(), t=steps)
    def test_firmly_nonexpansive(self, name, op, pair, t):
        y1, y2 = pair
        p1, p2 = op.prox(y1, t), op.prox(y2, t)
        d = p1 - p2
        assert d @ d <= d @ (y1 - y2) + 1e-9 * (1 + np.abs(y1 - y2).sum() ** 2)

    @settings(max_examples=200, deadline=None)
    @given(y=vectors(), t=steps)
    def test_result_in_domain(self, name, op, y, t):
        assert np.isfinite(op.value(op.prox(y, t)))

    @settings(max_examples=100, deadline=None)
    @given(y=vectors(6), t=steps, seed=st.integers(0, 2**32 - 1))
    def test_optimality_certificate(self, name, op, y, t, seed):
        p = op.prox(y, t)
        best = op.value(p) + (p - y) @ (p - y) / (2 * t)
        rng = np.random.default_rng(seed)
        for _ in range(100):
            x = op.prox(p + rng.normal(size=y.size) * rng.uniform(1e-3, 3), 1.0)  # a feasible point
            assert best <= op.value(x) + (x - y) @ (x - y) / (2 * t) + 1e-9 * (1 + abs(best))


@pytest.mark.parametrize("name,op", PROJECTIONS, ids=[o[0] for o in PROJECTIONS])
@settings(max_examples=200, deadline=None)
@given(y=vectors())
def test_projection_idempotent(name, op, y):
    p = op.prox(y, 1.0)
    np.testing.assert_allclose(op.prox(p, 1.0), p, atol=1e-12 * (1 + np.abs(p).max()))


@settings(max_examples=300, deadline=None)
@given(y=vectors(), r=radii)
def test_l1_ball_feasible(y, r):
    assert np.abs(project_l1_ball(y, r)).sum() <= r + 1e-10


@settings(max_examples=300, deadline=None)
@given(y=vectors(), r1=radii, r2=radii)
def test_intersection_feasible(y, r1, r2):
    x = project_l1_l2_intersection(y, r1, r2)
    assert np.abs(x).sum() <= r1 * (1 + 1e-12)
    assert np.linalg.norm(x) <= r2 * (1 + 1e-12)


def l1_ball_enumeration(y, r):
    """Projection onto the l1 ball by enumerating supports (n <= 4)."""
    n = y.size
    best, best_d = None, np.inf
    for k in range(1, n + 1):
        for S in itertools.combinations(range(n), k):
            S = list(S)
            theta = (np.abs(y[S]).sum() - r) / k
            if theta < 0 or np.any(np.abs(y[S]) - theta < 0):
                continue
            x = np.zeros(n)
            x[S] = np.sign(y[S]) * (np.abs(y[S]) - theta)
            d = np.linalg.norm(x - y)
            if d < best_d:
                best, best_d = x, d
    return best
