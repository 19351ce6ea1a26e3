"""Tests for the dense convex QP solver.

Solutions are cross-checked against an exhaustive active-set oracle:
every subset of inequality rows is treated as tight, the resulting
equality-constrained system is solved directly, and the best feasible
candidate with nonnegative multipliers wins.  Exponential, but exact
for the small instances used here.
"""

import itertools

import numpy as np
import pytest

from acdcreg.qp import (
    INFEASIBLE,
    MAX_ITER,
    OPTIMAL,
    QpError,
    QpProblem,
    QpWorkspace,
    check_kkt,
    kkt_residuals,
    solve_qp,
)


# -----------------------------------------------------------------------
# oracle
# -----------------------------------------------------------------------


def oracle_qp(P, q, A=None, b=None, G=None, h=None, tol=1e-8):
    """Minimize 0.5 x'Px + q'x by enumerating inequality active sets.

    Returns (x, objective) for the best KKT-consistent candidate, or
    None when no subset yields a feasible point (empty feasible set).
    """
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    m = P.shape[0]
    A = np.zeros((0, m)) if A is None else np.asarray(A, dtype=float)
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float)
    G = np.zeros((0, m)) if G is None else np.asarray(G, dtype=float)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float)
    me, mi = A.shape[0], G.shape[0]
    best = None
    for mask in itertools.product((False, True), repeat=mi):
        act = np.flatnonzero(np.array(mask, dtype=bool))
        Ca = np.vstack([A, G[act]])
        nc = Ca.shape[0]
        K = np.zeros((m + nc, m + nc))
        K[:m, :m] = P
        if nc:
            K[m:, :m] = Ca
            K[:m, m:] = Ca.T
        rhs = np.concatenate([-q, b, h[act]])
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        if np.linalg.norm(K @ sol - rhs, np.inf) > tol:
            continue  # inconsistent stationarity system for this subset
        x = sol[:m]
        mult = sol[m + me:]
        if me and np.linalg.norm(A @ x - b, np.inf) > tol:
            continue
        if mi and np.max(G @ x - h, initial=0.0) > tol:
            continue
        if act.size and np.min(mult) < -tol:
            continue
        obj = 0.5 * float(x @ P @ x) + float(q @ x)
        if best is None or obj < best[1] - 1e-12:
            best = (x, obj)
    return best


def random_feasible_problem(rng, m, me, mi):
    """A strictly convex QP whose feasible set provably contains a point."""
    B = rng.standard_normal((m, m))
    P = B.T @ B + 0.1 * np.eye(m)
    q = rng.standard_normal(m)
    x_feas = rng.standard_normal(m)
    A = rng.standard_normal((me, m)) if me else None
    b = A @ x_feas if me else None
    G = rng.standard_normal((mi, m)) if mi else None
    h = G @ x_feas + rng.uniform(0.0, 1.0, size=mi) if mi else None
    return QpProblem(P, q, A, b, G, h)


# -----------------------------------------------------------------------
# known solutions
# -----------------------------------------------------------------------


class TestKnownSolutions:
    def test_scalar_boundary_optimum(self):
        """min x^2 - 2x subject to x <= 0 pins the solution at x = 0."""
        prob = QpProblem([[2.0]], [-2.0], G=[[1.0]], h=[0.0])
        sol = solve_qp(prob)
        assert sol.status == OPTIMAL
        np.testing.assert_allclose(sol.x, [0.0], atol=1e-8)
        np.testing.assert_allclose(sol.z_ineq, [2.0], atol=1e-7)

    def test_projection_onto_hyperplane(self):
        """Projecting (1,1) onto x1 + x2 = 0 lands at the origin."""
        prob = QpProblem(2.0 * np.eye(2), [-2.0, -2.0],
                         A=[[1.0, 1.0]], b=[0.0])
        sol = solve_qp(prob)
        assert sol.status == OPTIMAL
        np.testing.assert_allclose(sol.x, [0.0, 0.0], atol=1e-8)

    def test_unconstrained_newton_step(self):
        prob = QpProblem([[4.0, 1.0], [1.0, 3.0]], [1.0, -2.0])
        sol = solve_qp(prob)
        assert sol.status == OPTIMAL
        expected = np.linalg.solve([[4.0, 1.0], [1.0, 3.0]], [-1.0, 2.0])
        np.testing.assert_allclose(sol.x, expected, atol=1e-8)

    def test_singular_objective_unconstrained(self):
        """PSD-singular P still solves when q lies in its range."""
        P = np.array([[1.0, 0.0], [0.0, 0.0]])
        prob = QpProblem(P, [-1.0, 0.0])
        sol = solve_qp(prob)
        assert sol.status == OPTIMAL
        np.testing.assert_allclose(sol.x[0], 1.0, atol=1e-7)

    def test_equality_and_inequality_mix(self):
        """Active box corner cross-checked against the oracle."""
        rng = np.random.default_rng(3)
        prob = random_feasible_problem(rng, 3, 1, 4)
        sol = solve_qp(prob)
        assert sol.status == OPTIMAL
        ref = oracle_qp(prob.P, prob.q, prob.A, prob.b, prob.G, prob.h)
        np.testing.assert_allclose(sol.x, ref[0], atol=1e-6)


# -----------------------------------------------------------------------
# residual report
# -----------------------------------------------------------------------


class TestResidualReport:
    def test_certified_optimum_has_tiny_residuals(self):
        prob = QpProblem([[2.0]], [-2.0], G=[[1.0]], h=[0.0])
        sol = solve_qp(prob)
        rep = check_kkt(prob, sol)
        assert rep.max_residual() <= 1e-9

    def test_perturbed_point_shows_in_report(self):
        """Pushing x off the optimum surfaces in exactly the right field."""
        prob = QpProblem([[2.0]], [-2.0], G=[[1.0]], h=[0.0])
        rep = kkt_residuals(prob, np.array([0.1]), np.zeros(0),
                            np.array([2.0]))
        np.testing.assert_allclose(rep.primal_ineq_violation, 0.1, atol=1e-12)
        np.testing.assert_allclose(rep.dual_residual, 0.2, atol=1e-12)

    def test_zero_problem_zero_residuals(self):
        prob = QpProblem(np.zeros((1, 1)), np.zeros(1))
        rep = kkt_residuals(prob, np.zeros(1), np.zeros(0), np.zeros(0))
        assert rep.primal_eq_residual == 0.0
        assert rep.primal_ineq_violation == 0.0
        assert rep.dual_residual == 0.0
        assert rep.complementarity == 0.0

    def test_complementarity_detects_slack_dual_pair(self):
        """Nonzero dual on a slack constraint shows up as complementarity."""
        prob = QpProblem([[2.0]], [0.0], G=[[1.0]], h=[1.0])
        rep = kkt_residuals(prob, np.array([0.0]), np.zeros(0),
                            np.array([3.0]))
        np.testing.assert_allclose(rep.complementarity, 3.0, atol=1e-12)


# -----------------------------------------------------------------------
# randomized battery against the oracle
# -----------------------------------------------------------------------


class TestOracleBattery:
    def test_strictly_convex_instances(self):
        """Solver matches exhaustive enumeration on 60 random QPs."""
        rng = np.random.default_rng(1234)
        for trial in range(60):
            m = int(rng.integers(1, 5))
            me = int(rng.integers(0, min(m, 2) + 1))
            mi = int(rng.integers(0, 7))
            prob = random_feasible_problem(rng, m, me, mi)
            sol = solve_qp(prob)
            assert sol.status == OPTIMAL, f"trial {trial}: {sol.message}"
            ref = oracle_qp(prob.P, prob.q, prob.A, prob.b, prob.G, prob.h)
            assert ref is not None, f"trial {trial}: oracle found no point"
            obj = 0.5 * float(sol.x @ prob.P @ sol.x) + float(prob.q @ sol.x)
            assert obj <= ref[1] + 1e-6 * max(1.0, abs(ref[1]))
            np.testing.assert_allclose(sol.x, ref[0], atol=2e-5,
                                       err_msg=f"trial {trial}")

    def test_rank_deficient_objectives(self):
        """PSD-singular P: objectives agree even when x is non-unique."""
        rng = np.random.default_rng(99)
        for trial in range(25):
            m = int(rng.integers(2, 5))
            B = rng.standard_normal((max(m - 1, 1), m))
            P = B.T @ B
            q = B.T @ rng.standard_normal(max(m - 1, 1))  # range of P
            x_feas = rng.standard_normal(m)
            G = rng.standard_normal((4, m))
            h = G @ x_feas + rng.uniform(0.0, 1.0, size=4)
            prob = QpProblem(P, q, G=G, h=h)
            sol = solve_qp(prob)
            assert sol.status == OPTIMAL, f"trial {trial}: {sol.message}"
            ref = oracle_qp(P, q, G=G, h=h)
            obj = 0.5 * float(sol.x @ P @ sol.x) + float(q @ sol.x)
            assert abs(obj - ref[1]) <= 1e-6 * max(1.0, abs(ref[1])), \
                f"trial {trial}"


# -----------------------------------------------------------------------
# infeasibility
# -----------------------------------------------------------------------


class TestInfeasible:
    def test_contradictory_bounds(self):
        """x <= -1 and -x <= -1 cannot hold at once."""
        prob = QpProblem([[2.0]], [0.0], G=[[1.0], [-1.0]], h=[-1.0, -1.0])
        sol = solve_qp(prob)
        assert sol.status == INFEASIBLE
        assert sol.message != ""

    def test_contradictory_equalities(self):
        prob = QpProblem(np.eye(2), np.zeros(2),
                         A=[[1.0, 0.0], [1.0, 0.0]], b=[0.0, 1.0])
        sol = solve_qp(prob)
        assert sol.status == INFEASIBLE

    def test_feasible_problem_not_flagged(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            prob = random_feasible_problem(rng, 3, 1, 5)
            sol = solve_qp(prob)
            assert sol.status == OPTIMAL


# -----------------------------------------------------------------------
# validation
# -----------------------------------------------------------------------


class TestValidation:
    def test_asymmetric_p_rejected(self):
        with pytest.raises(QpError):
            QpProblem([[1.0, 2.0], [0.0, 1.0]], [0.0, 0.0])

    def test_indefinite_p_rejected(self):
        prob = QpProblem([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0])
        with pytest.raises(QpError):
            solve_qp(prob)

    def test_dimension_mismatch(self):
        with pytest.raises(QpError):
            QpProblem(np.eye(2), [1.0, 2.0, 3.0])
        with pytest.raises(QpError):
            QpProblem(np.eye(2), [1.0, 2.0], G=[[1.0, 0.0]], h=[0.0, 1.0])

    def test_constraint_without_bound(self):
        with pytest.raises(QpError):
            QpProblem(np.eye(2), np.zeros(2), A=[[1.0, 0.0]])

    def test_nonfinite_rejected(self):
        with pytest.raises(QpError):
            QpProblem(np.eye(2), [np.nan, 0.0])

    def test_solution_arrays_read_only(self):
        prob = QpProblem([[2.0]], [-2.0], G=[[1.0]], h=[0.0])
        sol = solve_qp(prob)
        with pytest.raises(ValueError):
            sol.x[0] = 5.0


# -----------------------------------------------------------------------
# workspace reuse and warm starts
# -----------------------------------------------------------------------


class TestWorkspaceReuse:
    def test_fresh_linear_terms_match_one_shot_solves(self):
        """A shared workspace must agree with independent solves."""
        rng = np.random.default_rng(11)
        m, mi = 4, 6
        B = rng.standard_normal((m, m))
        P = B.T @ B + 0.1 * np.eye(m)
        x_feas = rng.standard_normal(m)
        G = rng.standard_normal((mi, m))
        h = G @ x_feas + rng.uniform(0.0, 1.0, size=mi)
        ws = QpWorkspace(P, G=G)
        for _ in range(8):
            q = rng.standard_normal(m)
            got = ws.solve(q, h=h)
            ref = solve_qp(QpProblem(P, q, G=G, h=h))
            assert got.status == OPTIMAL
            np.testing.assert_allclose(got.x, ref.x, atol=1e-6)

    def test_warm_start_converges(self):
        rng = np.random.default_rng(21)
        prob = random_feasible_problem(rng, 4, 0, 6)
        base = solve_qp(prob)
        warm = solve_qp(prob, x0=base.x, z0=base.z_ineq)
        assert warm.status == OPTIMAL
        np.testing.assert_allclose(warm.x, base.x, atol=1e-7)

    def test_nonnegative_inequality_duals(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            prob = random_feasible_problem(rng, 3, 0, 5)
            sol = solve_qp(prob)
            assert np.all(sol.z_ineq >= 0.0)

    def test_iteration_cap_reported(self):
        rng = np.random.default_rng(41)
        prob = random_feasible_problem(rng, 6, 2, 8)
        sol = solve_qp(prob, tol=1e-16, max_iter=3)
        assert sol.status in (MAX_ITER, OPTIMAL)
        if sol.status == MAX_ITER:
            assert sol.iterations == 3
