import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stringavg.operators import Property, check_property, halfspace_projection
from stringavg.subgradient import (BlockFeasible, ConvexFunctionOracle, InconsistentOracle,
                                   InequalityBlockSystem, cyclic_subgrad_op, max_violation,
                                   optimal_mu, parallel_block_op, plus_part)


def sq_norm_minus(r2):
    return ConvexFunctionOracle(lambda x: float(x @ x) - r2, lambda x: 2.0 * np.asarray(x),
                                "ball")


def affine(a, beta):
    a = np.asarray(a, float)
    return ConvexFunctionOracle(lambda x: float(a @ x) - beta, lambda x: a, "affine")


def random_halfspace_system(rng, n, m):
    # every halfspace contains z, so the system is consistent
    z = rng.normal(size=n)
    cons = []
    for _ in range(m):
        a = rng.normal(size=n)
        cons.append(affine(a, float(a @ z) + rng.uniform(0.0, 1.0)))
    return cons, z


def test_plus_part():
    assert plus_part(3.0) == 3.0
    assert plus_part(-2.0) == 0.0
    assert plus_part(0.0) == 0.0
    with pytest.raises(ValueError):
        plus_part(float("nan"))


def test_cyclic_ball_example():
    T = cyclic_subgrad_op(sq_norm_minus(1.0), 1.0, 2)
    assert np.allclose(T(np.array([2.0, 0.0])), [1.25, 0.0])


def test_cyclic_feasible_point_is_fixed():
    T = cyclic_subgrad_op(sq_norm_minus(1.0), 1.0, 2)
    x = np.array([0.3, 0.4])
    assert np.array_equal(T(x), x)
    assert T.is_fixed(x)


def test_cyclic_affine_equals_halfspace_projection():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a = rng.normal(size=4)
        beta = rng.normal()
        x = rng.normal(scale=4.0, size=4)
        T = cyclic_subgrad_op(affine(a, beta), 1.0, 4)
        P = halfspace_projection(a, beta)
        assert np.linalg.norm(T(x) - P(x)) <= 1e-12 * (1.0 + np.linalg.norm(x))


def test_cyclic_rejects_mu_and_zero_subgradient():
    with pytest.raises(ValueError):
        cyclic_subgrad_op(sq_norm_minus(1.0), 2.0, 2)
    flat = ConvexFunctionOracle(lambda x: 1.0, lambda x: np.zeros(2), "flat")
    with pytest.raises(InconsistentOracle):
        cyclic_subgrad_op(flat, 1.0, 2)(np.zeros(2))


def test_singleton_block_mu_is_one():
    S = InequalityBlockSystem([sq_norm_minus(1.0)], [[0]], n=2)
    assert optimal_mu(S, 0, [2.0, 1.0]) == pytest.approx(1.0, rel=1e-15)


def test_two_halfspaces_mu_and_exact_projection():
    S = InequalityBlockSystem([affine([1.0, 0.0], 0.0), affine([0.0, 1.0], 0.0)], [[0, 1]], n=2)
    x = np.array([2.0, 2.0])
    assert optimal_mu(S, 0, x) == pytest.approx(2.0, rel=1e-15)
    assert np.allclose(parallel_block_op(S, 0)(x), [0.0, 0.0])


def test_feasible_block_is_identity():
    S = InequalityBlockSystem([affine([1.0, 0.0], 0.0), affine([0.0, 1.0], 0.0)], [[0, 1]], n=2)
    x = np.array([-1.0, -3.0])
    with pytest.raises(BlockFeasible):
        optimal_mu(S, 0, x)
    assert np.array_equal(parallel_block_op(S, 0)(x), x)


def test_satisfied_members_do_not_evaluate_subgradient():
    calls = []

    def grad(x):
        calls.append(1)
        return np.ones(2)

    quiet = ConvexFunctionOracle(lambda x: -1.0, grad, "quiet")
    S = InequalityBlockSystem([quiet, affine([1.0, 0.0], 0.0)], [[0, 1]], n=2)
    parallel_block_op(S, 0)(np.array([1.0, 0.0]))
    assert calls == []


def test_optimal_mu_matches_grid_oracle():
    rng = np.random.default_rng(1)
    for _ in range(30):
        cons, z = random_halfspace_system(rng, 5, 6)
        cons.append(sq_norm_minus(float(z @ z) + 1.0))
        S = InequalityBlockSystem(cons, [range(7)], n=5)
        x = z + rng.normal(scale=3.0, size=5)
        g = np.array([c.value(x) for c in cons])
        if not np.any(g > 0):
            continue
        w = S.weights[0]
        hot = g > 0
        L = np.array([cons[i].subgrad(x) for i in np.flatnonzero(hot)])
        coef = w[hot] * g[hot] / np.einsum("ij,ij->i", L, L)
        d = coef @ L
        a, b = float(coef @ g[hot]), float(d @ d)
        grid = np.arange(0.0, 50.0, 1e-3)
        best = grid[np.argmin(-2.0 * grid * a + grid ** 2 * b)]
        assert abs(optimal_mu(S, 0, x) - best) <= 1e-3


def test_block_system_validation():
    with pytest.raises(ValueError):
        InequalityBlockSystem([affine([1.0], 0.0)], [[0]])
    with pytest.raises(ValueError):
        InequalityBlockSystem([affine([1.0], 0.0), affine([2.0], 0.0)], [[0]], n=1)
    with pytest.raises(ValueError):
        InequalityBlockSystem([affine([1.0], 0.0)], [[0]], weights=[[0.0]], n=1)


def test_max_violation():
    viol = max_violation(InequalityBlockSystem([affine([1.0, 0.0], 1.0),
                                               affine([0.0, 1.0], 0.0)], [[0, 1]], n=2).bank)
    assert viol([3.0, 1.0]) == 2.0
    assert viol([0.0, -1.0]) == 0.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_parallel_op_qne_strict_and_mu_at_least_one(seed):
    rng = np.random.default_rng(seed)
    cons, z = random_halfspace_system(rng, 4, 5)
    cons.append(sq_norm_minus(float(z @ z) + 0.5))
    S = InequalityBlockSystem(cons, [range(6)], weights=[rng.uniform(0.1, 1.0, 6)], n=4)
    T = parallel_block_op(S, 0)
    x = z + rng.normal(scale=5.0, size=4)
    assert check_property(T, Property.QNE, [x], [z]).passed
    try:
        mu = optimal_mu(S, 0, x)
    except BlockFeasible:
        return
    assert mu >= 1.0 - 1e-12
    assert np.linalg.norm(T(x) - z) < np.linalg.norm(x - z)
