import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mcmot.fota import (UNMATCHED, Assignment, SolverNumericalError, TransportPlan, TransportProblem,
                        admissible_fraction, anneal_schedule, extend_cost, extract_assignment, lp_oracle,
                        make_problem, sinkhorn, solve, solve_with_plan, transport_cost)


# --------------------------------------------------------------- extend_cost

def test_extend_cost_examples():
    np.testing.assert_array_equal(extend_cost(np.array([[3.0]]), 2.0), [[3, 2], [2, 7]])
    np.testing.assert_array_equal(extend_cost(np.array([[1.0, 2], [3, 4]]), 5.0),
                                  [[1, 2, 5], [3, 4, 5], [5, 5, 14]])


def test_extend_cost_corner_on_random_matrices(rng):
    for _ in range(100):
        C = rng.uniform(-5, 5, size=tuple(rng.integers(1, 8, 2)))
        eps = float(rng.uniform(0, 3))
        E = extend_cost(C, eps)
        assert E[-1, -1] == pytest.approx(2 * eps + C.max(), abs=1e-12)
        np.testing.assert_array_equal(E[:-1, :-1], C)
        assert np.all(E[:-1, -1] == eps) and np.all(E[-1, :-1] == eps)


def test_extend_cost_rejects_empty_and_bad_epsilon():
    with pytest.raises(ValueError):
        extend_cost(np.zeros((0, 3)), 1.0)
    with pytest.raises(ValueError):
        extend_cost(np.zeros((2, 2)), -1.0)


# ---------------------------------------------------------- problem validity

def test_problem_validation():
    C = np.zeros((2, 2))
    with pytest.raises(ValueError):
        TransportProblem(C, [1, 1], [1, 1], s=3)
    with pytest.raises(ValueError):
        TransportProblem(C, [1, 1], [1, 1], s=0)
    with pytest.raises(ValueError):
        TransportProblem(C, [1, 1], [1, 1], s=1, gamma=0)
    with pytest.raises(ValueError):
        TransportProblem(np.array([[np.inf, 0], [0, 0]]), [1, 1], [1, 1], s=1)
    with pytest.raises(ValueError):
        TransportProblem(C, [1, 1, 1], [1, 1], s=1)


def test_extended_masses_follow_fraction():
    pr = TransportProblem(np.zeros((2, 3)), [2, 2], [1, 1, 1], s=2)
    p_bar, q_bar = pr.extended_masses()
    np.testing.assert_array_equal(p_bar, [2, 2, 1])
    np.testing.assert_array_equal(q_bar, [1, 1, 1, 2])
    assert p_bar.sum() == q_bar.sum()


# ------------------------------------------------------------------ sinkhorn

def test_sinkhorn_uniform_zero_cost():
    pr = TransportProblem(np.zeros((2, 2)), [1, 1], [1, 1], s=2, epsilon=50.0)
    plan = sinkhorn(pr)
    assert plan.converged
    np.testing.assert_allclose(plan.plan[:2, :2], 0.5, atol=1e-9)


def test_sinkhorn_diagonal_preference():
    pr = TransportProblem(np.array([[0.0, 10], [10, 0]]), [1, 1], [1, 1], s=2, epsilon=100.0, gamma=0.1)
    plan = sinkhorn(pr)
    assert plan.plan[0, 0] >= 0.99 and plan.plan[1, 1] >= 0.99
    oracle, cost = lp_oracle(pr)
    assert cost == 0.0
    np.testing.assert_array_equal(oracle[:2, :2], np.eye(2))


def test_sinkhorn_one_track_absorbs_two_detections():
    pr = TransportProblem(np.array([[1.0, 1.0]]), [2], [1, 1], s=2, epsilon=5.0)
    plan = sinkhorn(pr)
    assert plan.plan[0, 0] == pytest.approx(1.0, abs=1e-6)
    assert plan.plan[0, 1] == pytest.approx(1.0, abs=1e-6)
    oracle, _ = lp_oracle(pr)
    np.testing.assert_allclose(plan.plan, oracle, atol=1e-6)
    a = extract_assignment(plan)
    assert a.detection_to_track == (0, 0)
    assert a.track_to_detections == ((0, 1),)


def test_sinkhorn_plan_nonnegative_and_deterministic(rng):
    C = rng.uniform(0, 10, (6, 8))
    pr = make_problem(C, epsilon=5.0)
    a, b = sinkhorn(pr), sinkhorn(pr)
    assert np.all(a.plan >= 0)
    assert np.array_equal(a.plan, b.plan)
    assert a.iterations_used == b.iterations_used


def test_sinkhorn_reports_non_convergence():
    rng = np.random.default_rng(9)
    pr = make_problem(rng.uniform(0, 10, (20, 20)), gamma=0.01, max_iters=1)
    plan = sinkhorn(pr)
    assert not plan.converged
    assert plan.marginal_error > pr.tol
    assert plan.iterations_used <= 1


def test_sinkhorn_kernel_overflow_raises():
    pr = TransportProblem(np.array([[1e300, 0.0]]), [1], [1, 1], s=1, gamma=1e-300)
    with pytest.raises(SolverNumericalError):
        sinkhorn(pr)


def test_marginal_feasibility_on_random_problems():
    rng = np.random.default_rng(21)
    for _ in range(40):
        n, m = (int(v) for v in rng.integers(1, 31, 2))
        pr = make_problem(rng.uniform(0, 10, (n, m)), gamma=0.1, max_iters=500)
        plan = sinkhorn(pr)
        assert plan.converged
        p_bar, q_bar = pr.extended_masses()
        assert np.max(np.abs(plan.plan.sum(1) - p_bar)) < 1e-6
        assert np.max(np.abs(plan.plan.sum(0) - q_bar)) < 1e-6


def test_plain_sweeps_error_is_monotone():
    rng = np.random.default_rng(31)
    for _ in range(20):
        n, m = (int(v) for v in rng.integers(2, 20, 2))
        pr = make_problem(rng.uniform(0, 10, (n, m)), gamma=0.5, max_iters=300, tol=1e-12)
        hist = np.array(sinkhorn(pr, anneal=False, newton=False).error_history)
        checked = hist[::5]
        assert np.all(np.diff(checked) <= 1e-12)


def test_annealing_does_not_change_the_fixed_point():
    rng = np.random.default_rng(5)
    pr = make_problem(rng.uniform(0, 10, (5, 7)), gamma=0.5, max_iters=3000, tol=1e-11)
    a = sinkhorn(pr, anneal=False, newton=False)
    b = sinkhorn(pr)
    np.testing.assert_allclose(a.plan, b.plan, atol=1e-8)


def test_anneal_schedule_budget():
    sched = anneal_schedule(100.0, 0.1, 50)
    assert sched[-1][0] == 0.1
    assert sum(k for _, k in sched) == 50
    assert sched[-1][1] >= 25
    assert anneal_schedule(0.01, 0.1, 50) == [(0.1, 50)]


# ------------------------------------------------------------ permutations

@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_permutation_equivariance(n, m, seed):
    rng = np.random.default_rng(seed)
    C = rng.uniform(0, 10, (n, m))
    p = rng.integers(1, 3, n).astype(float)
    q = np.ones(m)
    pr = make_problem(C, p, q, epsilon=6.0, max_iters=200)
    if pr is None:
        return
    rp, cp = rng.permutation(n), rng.permutation(m)
    pr2 = TransportProblem(C[np.ix_(rp, cp)], p[rp], q[cp], pr.s, pr.epsilon, pr.gamma, pr.max_iters, pr.tol)
    a, b = sinkhorn(pr).plan, sinkhorn(pr2).plan
    rows = np.append(rp, n)
    cols = np.append(cp, m)
    np.testing.assert_allclose(b, a[np.ix_(rows, cols)], atol=1e-10, rtol=0)


@given(st.integers(1, 6), st.integers(1, 6), st.floats(0.5, 20), st.integers(0, 2**32 - 1))
def test_cost_shift_keeps_assignment(n, m, shift, seed):
    rng = np.random.default_rng(seed)
    C = rng.uniform(0, 10, (n, m))
    pr = make_problem(C, epsilon=5.0, max_iters=200)
    if pr is None:
        return
    shifted = TransportProblem(C + shift, pr.p, pr.q, pr.s, pr.epsilon + shift, pr.gamma, pr.max_iters, pr.tol)
    assert solve(pr) == solve(shifted)


# ------------------------------------------------------------------ extract

def test_extract_examples():
    diag = np.array([[0.9, 0.05, 0.05], [0.05, 0.9, 0.05], [0.05, 0.05, 0.0]])
    assert extract_assignment(diag).detection_to_track == (0, 1)
    dust = np.array([[0.2, 0.0], [0.8, 0.0]])
    assert extract_assignment(dust).detection_to_track == (UNMATCHED,)


def test_extract_min_mass_and_ties():
    thin = np.array([[0.25, 0.0], [0.25, 0.0], [0.2, 0.0]])
    assert extract_assignment(thin, min_mass=0.3).detection_to_track == (UNMATCHED,)
    assert extract_assignment(thin, min_mass=0.2).detection_to_track == (0,)


def test_assignment_consistency_check():
    with pytest.raises(ValueError):
        Assignment((0, 0), ((0,), ()))
    with pytest.raises(ValueError):
        Assignment((0, 0), ((0, 1), (1,)))
    a = Assignment.from_detection_map([1, UNMATCHED, 1], 2)
    assert a.track_to_detections == ((), (0, 2))
    assert a.pairs() == [(1, 0), (1, 2)]


# -------------------------------------------------------------------- oracle

def test_oracle_examples():
    C = np.array([[0.0, 10], [10, 0]])
    plan, cost = lp_oracle(TransportProblem(C, [1, 1], [1, 1], s=2, epsilon=3.0))
    assert cost == 0.0
    np.testing.assert_array_equal(plan[:2, :2], np.eye(2))
    plan, cost = lp_oracle(TransportProblem(np.array([[7.0]]), [1], [1], s=1, epsilon=100.0))
    assert cost == 7.0 and plan[0, 0] == 1.0
    flat = np.full((3, 3), 4.0)
    _, cost = lp_oracle(TransportProblem(flat, [1, 1, 1], [1, 1, 1], s=3, epsilon=2.0))
    assert cost == pytest.approx(12.0)


def test_oracle_rejects_large_instances():
    with pytest.raises(ValueError):
        lp_oracle(make_problem(np.zeros((9, 9))))


def test_enumeration_agrees_with_lp_path(rng):
    for _ in range(30):
        n, m = (int(v) for v in rng.integers(1, 5, 2))
        C = rng.uniform(0, 10, (n, m))
        p = rng.integers(1, 3, n).astype(float)
        pr = make_problem(C, p, np.ones(m), s=float(rng.integers(1, min(p.sum(), m) + 1)), epsilon=float(rng.uniform(0, 10)))
        _, enum_cost = lp_oracle(pr)
        # fractional masses force the LP branch on the same optimum
        frac = TransportProblem(C, p * (1 + 1e-13), pr.q, pr.s, pr.epsilon)
        _, lp_cost = lp_oracle(frac)
        assert enum_cost == pytest.approx(lp_cost, abs=1e-6)


def test_oracle_lower_bounds_sinkhorn(rng):
    for _ in range(30):
        n, m = (int(v) for v in rng.integers(1, 6, 2))
        pr = make_problem(rng.uniform(0, 10, (n, m)), epsilon=float(rng.uniform(1, 9)), max_iters=500)
        if pr is None:
            continue
        plan = sinkhorn(pr)
        _, exact = lp_oracle(pr)
        assert exact <= transport_cost(pr, plan.plan) + 1e-6


# ------------------------------------------------------------------ dustbin

def test_admissible_fraction_examples():
    C = np.array([[1.0, 9.0], [9.0, 9.0]])
    assert admissible_fraction(C, [1, 1], [1, 1], 5.0) == 1.0
    assert admissible_fraction(C, [1, 1], [1, 1], None) == 2.0
    assert admissible_fraction(C, [1, 1], [1, 1], 0.5) == 0.0
    assert admissible_fraction(np.array([[1.0, 1.0, 9.0]]), [2], [1, 1, 1], 5.0) == 2.0
    # fractional masses go through the general max-flow path
    assert admissible_fraction(C, [0.5, 1], [1, 0.25], 5.0) == pytest.approx(0.5)


def test_admissible_fraction_matches_brute_force(rng):
    for _ in range(50):
        n, m = (int(v) for v in rng.integers(1, 5, 2))
        C = rng.uniform(0, 10, (n, m))
        p = rng.integers(1, 3, n)
        eps = float(rng.uniform(0, 10))
        best = 0
        for place in itertools.product(range(n + 1), repeat=m):
            loads = np.bincount(place, minlength=n + 1)[:n]
            if np.any(loads > p):
                continue
            if all(i == n or C[i, j] <= eps for j, i in enumerate(place)):
                best = max(best, sum(1 for i in place if i < n))
        assert admissible_fraction(C, p, np.ones(m), eps) == best


def test_make_problem_none_when_nothing_admissible():
    assert make_problem(np.full((2, 2), 9.0), epsilon=1.0) is None


def test_dustbin_correctness():
    rng = np.random.default_rng(77)
    gamma = 0.1
    trials = hits = 0
    for _ in range(300):
        n, m = (int(v) for v in rng.integers(1, 8, 2))
        eps = float(rng.uniform(2, 6))
        C = rng.uniform(0, 10, (n, m))
        far = int(rng.integers(0, m))
        C[:, far] = eps + 5 * gamma + rng.uniform(0, 4, n)
        pr = make_problem(C, epsilon=eps, gamma=gamma, max_iters=200)
        if pr is None:
            continue
        trials += 1
        hits += solve(pr).detection_to_track[far] == UNMATCHED
    assert trials > 200
    assert hits >= 0.99 * trials


def test_solve_with_plan_returns_matching_pair():
    pr = make_problem(np.array([[0.0, 5.0], [5.0, 0.0]]), epsilon=2.0)
    plan, assignment = solve_with_plan(pr)
    assert isinstance(plan, TransportPlan)
    assert assignment == extract_assignment(plan)
    assert assignment.detection_to_track == (0, 1)
