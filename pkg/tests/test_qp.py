"""
Unit tests for the inequality-constrained least-squares solver.
"""

import itertools

import numpy as np
import pytest

from interval_sar.config import SolverOptions
from interval_sar.errors import DimensionMismatch, Infeasible, RankDeficient
from interval_sar.qp import QpProblem, QpSolution, check_kkt, least_squares, solve


def random_problem(rng, m=6, p=3, q=5):
    """A random QP whose constraints hold strictly at some point."""
    Z = rng.normal(size=(m, p))
    Y = rng.normal(scale=3.0, size=m)
    G = rng.normal(size=(q, p))
    x_feasible = rng.normal(size=p)
    h = G @ x_feasible + rng.uniform(0.0, 1.0, size=q)
    return QpProblem(Z=Z, Y=Y, G=G, h=h)


def enumerate_active_sets(problem):
    """Best objective over every feasible equality-constrained stationary point."""
    H = 2.0 * problem.Z.T @ problem.Z
    g = 2.0 * problem.Z.T @ problem.Y
    p = problem.p
    best = np.inf
    for size in range(0, p + 1):
        for rows in itertools.combinations(range(problem.n_constraints), size):
            rows = list(rows)
            A = problem.G[rows]
            kkt = np.block([[H, A.T], [A, np.zeros((size, size))]])
            rhs = np.concatenate([g, problem.h[rows]])
            try:
                x = np.linalg.solve(kkt, rhs)[:p]
            except np.linalg.LinAlgError:
                continue
            if np.all(problem.G @ x <= problem.h + 1e-9):
                best = min(best, problem.objective(x))
    return best


class TestProblem:
    """Tests for QpProblem validation."""

    def test_dimension_mismatch(self):
        """Test that Y must match the rows of Z."""
        with pytest.raises(DimensionMismatch):
            QpProblem(Z=np.ones((3, 2)), Y=np.ones(4), G=np.zeros((0, 2)), h=np.zeros(0))

    def test_constraint_mismatch(self):
        """Test that h must match the rows of G."""
        with pytest.raises(DimensionMismatch):
            QpProblem(Z=np.eye(2), Y=np.ones(2), G=np.ones((2, 2)), h=np.ones(3))


class TestSolve:
    """Tests for the active-set solver."""

    def test_no_constraints_is_ols(self):
        """Test that an empty G gives the ordinary least-squares solution."""
        rng = np.random.default_rng(0)
        Z, Y = rng.normal(size=(10, 3)), rng.normal(size=10)
        problem = QpProblem(Z=Z, Y=Y, G=np.zeros((0, 3)), h=np.zeros(0))
        solution = solve(problem)
        expected = np.linalg.lstsq(Z, Y, rcond=None)[0]
        np.testing.assert_allclose(solution.beta, expected, atol=1e-10)
        assert solution.active_set == ()

    def test_one_dimensional_active(self):
        """Test minimize (b - 2)^2 subject to b <= 1."""
        problem = QpProblem(Z=np.array([[1.0]]), Y=np.array([2.0]), G=np.array([[1.0]]), h=np.array([1.0]))
        solution = solve(problem)
        assert solution.beta[0] == pytest.approx(1.0)
        assert solution.multipliers[0] == pytest.approx(2.0)
        assert solution.objective == pytest.approx(1.0)
        assert solution.active_set == (0,)

    def test_inactive_constraint(self):
        """Test that a slack constraint leaves the OLS answer."""
        problem = QpProblem(Z=np.array([[1.0]]), Y=np.array([2.0]), G=np.array([[1.0]]), h=np.array([5.0]))
        solution = solve(problem)
        assert solution.beta[0] == pytest.approx(2.0)
        assert solution.multipliers[0] == 0.0

    def test_infeasible(self):
        """Test that contradictory constraints raise Infeasible."""
        problem = QpProblem(
            Z=np.array([[1.0]]), Y=np.array([0.0]), G=np.array([[1.0], [-1.0]]), h=np.array([-1.0, -1.0])
        )
        with pytest.raises(Infeasible):
            solve(problem)

    def test_rank_deficient(self):
        """Test that collinear design columns raise RankDeficient."""
        Z = np.column_stack([np.ones(5), np.arange(5.0), 2 * np.arange(5.0)])
        problem = QpProblem(Z=Z, Y=np.arange(5.0), G=np.zeros((0, 3)), h=np.zeros(0))
        with pytest.raises(RankDeficient):
            solve(problem)
        with pytest.raises(RankDeficient):
            least_squares(Z, np.arange(5.0))

    def test_feasible_start_point(self):
        """Test that a supplied feasible x0 reaches the same optimum as phase one."""
        rng = np.random.default_rng(5)
        problem = random_problem(rng)
        cold = solve(problem)
        x0 = np.linalg.lstsq(problem.G, problem.h - 1.0, rcond=None)[0]
        if np.all(problem.G @ x0 <= problem.h):
            warm = solve(problem, x0=x0)
            assert warm.objective == pytest.approx(cold.objective, rel=1e-9, abs=1e-9)

    def test_warm_start_identical(self):
        """Test that hinting the optimal active set reproduces the cold-start solution."""
        rng = np.random.default_rng(7)
        for _ in range(10):
            problem = random_problem(rng)
            first = solve(problem)
            second = solve(problem, working_set=first.active_set)
            np.testing.assert_allclose(first.beta, second.beta, rtol=1e-10, atol=1e-10)

    def test_bad_warm_start_recovers(self):
        """Test that a wrong active-set hint still reaches the optimum."""
        rng = np.random.default_rng(8)
        for _ in range(10):
            problem = random_problem(rng)
            cold = solve(problem)
            hinted = solve(problem, working_set=[0, 1, 2])
            assert hinted.objective == pytest.approx(cold.objective, rel=1e-8, abs=1e-8)

    def test_matches_enumeration_oracle(self):
        """Test 50 random tiny problems against enumerating every active set."""
        rng = np.random.default_rng(2024)
        options = SolverOptions()
        for _ in range(50):
            problem = random_problem(rng)
            solution = solve(problem, options)
            oracle = enumerate_active_sets(problem)
            assert abs(solution.objective - oracle) <= 1e-3
            assert check_kkt(problem, solution).within(options)


class TestKkt:
    """Tests for KKT diagnostics."""

    @pytest.fixture
    def solved(self):
        """A random problem with its solution."""
        rng = np.random.default_rng(13)
        problem = random_problem(rng)
        return problem, solve(problem)

    def test_solution_within_tolerance(self, solved):
        """Test that solver output passes its own KKT check."""
        problem, solution = solved
        assert check_kkt(problem, solution).within()

    def test_perturbed_beta_fails(self, solved):
        """Test that moving beta by one unit breaks a KKT condition."""
        problem, solution = solved
        beta = solution.beta.copy()
        beta[0] += 1.0
        moved = QpSolution(
            beta=beta,
            objective=problem.objective(beta),
            active_set=solution.active_set,
            multipliers=solution.multipliers,
            iterations=0,
        )
        assert not check_kkt(problem, moved).within()

    def test_ols_violates_binding_constraint(self):
        """Test that an infeasible OLS point reports a primal violation."""
        problem = QpProblem(Z=np.array([[1.0]]), Y=np.array([2.0]), G=np.array([[1.0]]), h=np.array([1.0]))
        ols = QpSolution(beta=np.array([2.0]), objective=0.0, active_set=(), multipliers=np.zeros(1), iterations=0)
        assert check_kkt(problem, ols).primal_violation == pytest.approx(1.0)

    def test_wrong_multiplier_length(self, solved):
        """Test that a multiplier vector of the wrong size is rejected."""
        problem, solution = solved
        bad = QpSolution(
            beta=solution.beta, objective=solution.objective, active_set=(), multipliers=np.zeros(1), iterations=0
        )
        with pytest.raises(DimensionMismatch):
            check_kkt(problem, bad)
