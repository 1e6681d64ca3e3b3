import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stringavg.operators import OperatorHandle, StepMode, halfspace_projection
from stringavg.strings import (AveragedOperator, InequalityViolation, SolverConfig,
                               StringEvaluationError, StringPlan, TerminalStatus, bound_pair,
                               compare_error_bounds, evaluate_strings, iterate, sigma_max)


def two_halfspaces():
    P1 = halfspace_projection([1.0, 0.0], 0.0)
    P2 = halfspace_projection([0.0, 1.0], 0.0)
    viol = lambda x: max(x[0], x[1], 0.0)  # noqa: E731
    return [P1, P2], viol


def test_plan_normalizes_and_validates():
    plan = StringPlan([[0], [1, 2]], [2.0, 6.0])
    assert plan.weights == (0.25, 0.75)
    plan.validate(3)
    with pytest.raises(ValueError):
        plan.validate(4)
    with pytest.raises(ValueError):
        StringPlan([[0], []])
    with pytest.raises(ValueError):
        StringPlan([[0], [1]], [1.0, 0.0])


def test_single_string_single_operator():
    pool, _ = two_halfspaces()
    A = AveragedOperator(pool[:1], StringPlan([[0]]))
    x = np.array([2.0, 2.0])
    U, T = evaluate_strings(A, x)
    assert np.array_equal(U[0], pool[0](x))
    assert np.array_equal(T, pool[0](x))


def test_two_strings_average():
    pool, _ = two_halfspaces()
    A = AveragedOperator(pool, StringPlan([[0], [1]], [0.5, 0.5]))
    U, T = evaluate_strings(A, [2.0, 2.0])
    assert np.allclose(U[0], [0.0, 2.0])
    assert np.allclose(U[1], [2.0, 0.0])
    assert np.allclose(T, [1.0, 1.0])


def test_sequential_composition():
    pool, _ = two_halfspaces()
    A = AveragedOperator(pool, StringPlan([[0, 1]]))
    U, T = evaluate_strings(A, [2.0, 2.0])
    assert np.allclose(U[0], [0.0, 0.0])


def test_string_error_carries_location():
    boom = OperatorHandle(2, lambda x: 1 / 0)
    pool, _ = two_halfspaces()
    A = AveragedOperator([pool[0], boom], StringPlan([[0, 1]]))
    with pytest.raises(StringEvaluationError) as err:
        evaluate_strings(A, [1.0, 1.0])
    assert err.value.string == 0 and err.value.position == 1 and err.value.op_index == 1


def test_sigma_max_single_string_is_one():
    pool, _ = two_halfspaces()
    A = AveragedOperator(pool, StringPlan([[0, 1]]))
    x = np.array([3.0, 5.0])
    U, T = evaluate_strings(A, x)
    assert sigma_max(A, x, U, T) == 1.0


def test_sigma_max_guard_convention():
    pool, _ = two_halfspaces()
    A = AveragedOperator(pool, StringPlan([[0], [1]]))
    x = np.array([1e-6, 1e-6])
    U, T = evaluate_strings(A, x)
    assert sigma_max(A, x, U, T, guard=1e-10) == 1.0


def test_sigma_max_two_projection_value():
    # (1/2 * 4 + 1/2 * 4) / ||(-1, -1)||^2 = 2
    pool, _ = two_halfspaces()
    A = AveragedOperator(pool, StringPlan([[0], [1]]))
    x = np.array([2.0, 2.0])
    U, T = evaluate_strings(A, x)
    assert sigma_max(A, x, U, T) == pytest.approx(2.0, rel=1e-15)


def test_iterate_single_projection_one_step():
    P = halfspace_projection([1.0, 1.0], 1.0)
    A = AveragedOperator([P], StringPlan([[0]]),
                         violation=lambda x: max(x[0] + x[1] - 1.0, 0.0))
    x, tr = iterate(A, [3.0, 2.0], SolverConfig(feasibility_tol=1e-12))
    assert tr.terminal_status is TerminalStatus.FEASIBILITY_REACHED
    assert tr.iterations == 1
    assert x[0] + x[1] == pytest.approx(1.0)


def test_iterate_already_feasible():
    pool, viol = two_halfspaces()
    A = AveragedOperator(pool, StringPlan([[0], [1]]), violation=viol)
    x, tr = iterate(A, [-1.0, -2.0], SolverConfig())
    assert tr.iterations == 0
    assert tr.terminal_status is TerminalStatus.FEASIBILITY_REACHED
    assert [r.k for r in tr.rows] == [0]


def test_extrapolation_reaches_intersection_in_one_step():
    pool, viol = two_halfspaces()
    A = AveragedOperator(pool, StringPlan([[0], [1]]), violation=viol)
    cfg = SolverConfig(max_iters=1, feasibility_tol=1e-12)
    x, tr = iterate(A, [2.0, 2.0], cfg)
    assert np.allclose(x, [0.0, 0.0])
    assert tr.rows[0].sigma == pytest.approx(2.0)
    assert tr.terminal_status is TerminalStatus.FEASIBILITY_REACHED

    cfg_we = SolverConfig(max_iters=1, feasibility_tol=1e-12, step_mode=StepMode.CONSTANT)
    x, tr = iterate(A, [2.0, 2.0], cfg_we)
    assert np.allclose(x, [1.0, 1.0])
    assert tr.terminal_status is TerminalStatus.MAX_ITERS


def test_guard_terminal_status_consistent():
    # x_1 <= 0 and x_1 >= 0 are consistent; start the iteration next to them
    P1 = halfspace_projection([1.0], 0.0)
    P2 = halfspace_projection([-1.0], 0.0)
    A = AveragedOperator([P1, P2], StringPlan([[0], [1]]))
    x, tr = iterate(A, [1e-6], SolverConfig(feasibility_tol=1e-300))
    assert tr.terminal_status is TerminalStatus.GUARD_TRIGGERED
    U, T = evaluate_strings(A, x)
    assert np.dot(T - x, T - x) <= 1e-10


def test_rows_strictly_increasing_and_csv():
    pool, viol = two_halfspaces()
    A = AveragedOperator(pool, StringPlan([[0], [1]]), violation=viol,
                         reference=np.array([-1.0, -1.0]))
    x, tr = iterate(A, [5.0, 1.0], SolverConfig(step_mode=StepMode.CONSTANT,
                                                feasibility_tol=1e-3, assert_fejer=True))
    assert tr.terminal_status is TerminalStatus.FEASIBILITY_REACHED
    ks = [r.k for r in tr.rows]
    assert ks == list(range(len(ks)))
    csv = tr.to_csv()
    assert csv.splitlines()[0] == "k,sigma,lambda,step_norm,violation,distance"
    assert len(csv.splitlines()) == len(ks) + 1
    assert tr.first_below(1e-3) == tr.iterations


def test_fejer_assertion_fires_on_bad_operator():
    # pushes away from the reference point 0 while claiming it is fixed
    bad = OperatorHandle(1, lambda x: 2.0 * x, fix_test=lambda x: True)
    A = AveragedOperator([bad], StringPlan([[0]]), reference=np.zeros(1))
    cfg = SolverConfig(step_mode=StepMode.CONSTANT, assert_fejer=True, max_iters=5)
    with pytest.raises(InequalityViolation) as err:
        iterate(A, [1.0], cfg)
    assert err.value.k == 0
    assert err.value.lhs > err.value.rhs


def test_error_bound_comparison_examples():
    b1, b2 = bound_pair(0.5, 4, 1.0)
    assert b1 == pytest.approx(0.25)
    assert b2 == pytest.approx(0.75 / 64)
    assert b1 / b2 == pytest.approx(21.333333333333332)
    b1, b2 = bound_pair(0.5, 1, 1.0)
    assert (b1, b2) == (pytest.approx(0.25), pytest.approx(0.1875))
    assert bound_pair(0.5, 4, 0.0) == (0.0, 0.0)


def test_compare_error_bounds_on_trace():
    pool, viol = two_halfspaces()
    A = AveragedOperator(pool, StringPlan([[0], [1]]), violation=viol,
                         reference=np.array([-1.0, -3.0]))
    cfg = SolverConfig(lambda_schedule=0.5, feasibility_tol=1e-9, assert_error_bound=True,
                       assert_fejer=True)
    x, tr = iterate(A, [4.0, 3.0], cfg)
    rep = compare_error_bounds(tr, 2)
    assert rep.rows and rep.sqne_dominates and rep.decrease_meets_sqne_bound


def test_compare_error_bounds_requires_reference():
    pool, viol = two_halfspaces()
    A = AveragedOperator(pool, StringPlan([[0], [1]]), violation=viol)
    x, tr = iterate(A, [4.0, 3.0], SolverConfig())
    with pytest.raises(ValueError):
        compare_error_bounds(tr, 2)


def test_lambda_schedule_validation():
    with pytest.raises(ValueError):
        SolverConfig(lambda_schedule=2.0).lam(0)
    cfg = SolverConfig(lambda_schedule=lambda k: 0.5 + 0.1 * (k % 2))
    assert cfg.lam(1) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        SolverConfig(max_iters=0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_string_order_invariance_and_sigma_bound(seed):
    rng = np.random.default_rng(seed)
    n, m = 4, 5
    pool = [halfspace_projection(rng.normal(size=n), rng.uniform(-1, 1)) for _ in range(m)]
    strings = [[0, 1], [2], [3, 4]]
    w = rng.uniform(0.1, 1.0, size=3)
    x = rng.normal(scale=5.0, size=n)
    A = AveragedOperator(pool, StringPlan(strings, w))
    U, T = evaluate_strings(A, x)
    assert sigma_max(A, x, U, T) >= 1.0 - 1e-10
    for perm in itertools.permutations(range(3)):
        B = AveragedOperator(pool, StringPlan([strings[p] for p in perm], w[list(perm)]))
        T2 = evaluate_strings(B, x)[1]
        assert np.linalg.norm(T2 - T) <= 1e-12 * max(1.0, np.linalg.norm(T))
