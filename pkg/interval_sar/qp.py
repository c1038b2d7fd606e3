"""
Inequality-constrained least squares:

    minimize ||Y - Z beta||^2  subject to  G beta <= h

solved with a primal active-set method. Each iteration minimizes the
objective on the current working set through a null-space step (QR of the
active constraint rows). The solver accepts a feasible starting point and a
working-set hint so consecutive problems along a parameter grid can be warm
started.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Tuple

import numpy as np
from scipy import linalg, optimize

from .config import SolverOptions
from .errors import (DimensionMismatch, Infeasible, MaxIterations,
                     RankDeficient)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class QpProblem:
    """
    Attributes:
        Z: Design matrix (m x p)
        Y: Response vector (m)
        G: Constraint matrix (q x p); q may be zero
        h: Constraint bounds (q)
    """

    Z: np.ndarray
    Y: np.ndarray
    G: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        Y = np.asarray(self.Y, dtype=float).ravel()
        G = np.asarray(self.G, dtype=float).reshape(-1, Z.shape[1])
        h = np.asarray(self.h, dtype=float).ravel()
        if Y.size != Z.shape[0]:
            raise DimensionMismatch(f"Y has {Y.size} rows, Z has {Z.shape[0]}")
        if h.size != G.shape[0]:
            raise DimensionMismatch(f"h has {h.size} entries, G has {G.shape[0]} rows")
        for name, value in (("Z", Z), ("Y", Y), ("G", G), ("h", h)):
            object.__setattr__(self, name, value)

    @property
    def p(self) -> int:
        return self.Z.shape[1]

    @property
    def n_constraints(self) -> int:
        return self.G.shape[0]

    def objective(self, beta: np.ndarray) -> float:
        resid = self.Y - self.Z @ beta
        return float(resid @ resid)

    def gradient(self, beta: np.ndarray) -> np.ndarray:
        return 2.0 * self.Z.T @ (self.Z @ beta - self.Y)


@dataclass(frozen=True, eq=False)
class QpSolution:
    """
    Attributes:
        beta: Minimizer
        objective: ||Y - Z beta||^2 at beta
        active_set: Sorted indices of the constraints in the final working set
        multipliers: Lagrange multipliers for every constraint (zero off the active set)
        iterations: Active-set iterations performed
    """

    beta: np.ndarray
    objective: float
    active_set: Tuple[int, ...]
    multipliers: np.ndarray
    iterations: int


@dataclass(frozen=True)
class KktDiagnostics:
    """Largest primal violation, stationarity residual and complementarity residual."""

    primal_violation: float
    stationarity: float
    complementarity: float
    stationarity_scale: float = field(default=1.0)

    def within(self, options: SolverOptions = SolverOptions()) -> bool:
        return (
            self.primal_violation <= options.primal_tol
            and self.stationarity <= options.stationarity_tol * self.stationarity_scale
            and self.complementarity <= options.complementarity_tol
        )


def check_kkt(problem: QpProblem, solution: QpSolution) -> KktDiagnostics:
    """
    KKT residuals of a candidate solution.

    stationarity_scale is 1 + ||2 Z'Y||_inf, the scale the relative
    stationarity tolerance applies to.
    """
    beta = np.asarray(solution.beta, dtype=float).ravel()
    lam = np.asarray(solution.multipliers, dtype=float).ravel()
    if beta.size != problem.p or lam.size != problem.n_constraints:
        raise DimensionMismatch(
            f"solution has {beta.size} coefficients and {lam.size} multipliers; "
            f"problem has p={problem.p}, q={problem.n_constraints}"
        )
    slack = problem.h - problem.G @ beta
    primal = float(np.max(np.maximum(-slack, 0.0), initial=0.0))
    stationarity = float(np.max(np.abs(problem.gradient(beta) + problem.G.T @ lam), initial=0.0))
    complementarity = float(np.max(np.abs(lam * slack), initial=0.0))
    dual = float(np.max(np.maximum(-lam, 0.0), initial=0.0))
    scale = 1.0 + float(np.max(np.abs(2.0 * problem.Z.T @ problem.Y), initial=0.0))
    return KktDiagnostics(
        primal_violation=primal,
        stationarity=stationarity,
        complementarity=max(complementarity, dual),
        stationarity_scale=scale,
    )


def _check_rank(Z: np.ndarray, options: SolverOptions) -> None:
    eig = np.linalg.eigvalsh(Z.T @ Z)
    if eig[-1] <= 0 or eig[0] <= options.rank_tol * eig[-1]:
        raise RankDeficient(
            f"Z'Z is singular (eigenvalue ratio {eig[0] / eig[-1] if eig[-1] > 0 else 0.0:.3e})"
        )


def least_squares(Z: np.ndarray, Y: np.ndarray, options: SolverOptions = SolverOptions()) -> np.ndarray:
    """
    Unconstrained minimizer of ||Y - Z beta||^2 from the normal equations.

    Raises:
        RankDeficient: If Z'Z is singular beyond the relative threshold
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    _check_rank(Z, options)
    factor = linalg.cho_factor(Z.T @ Z)
    return linalg.cho_solve(factor, Z.T @ np.asarray(Y, dtype=float))


class _Workspace:
    """Cached quantities of one problem."""

    def __init__(self, problem: QpProblem, options: SolverOptions):
        self.problem = problem
        self.options = options
        self.H = 2.0 * problem.Z.T @ problem.Z
        self.grad_scale = 1.0 + float(np.max(np.abs(2.0 * problem.Z.T @ problem.Y), initial=0.0))

    def independent_rows(self, rows: Iterable[int]) -> list:
        """Drop working-set rows that are linearly dependent on the others."""
        rows = sorted(set(int(r) for r in rows))
        if not rows:
            return []
        A = self.problem.G[rows]
        _, R, piv = linalg.qr(A.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        tol = max(A.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
        keep = piv[: int(np.count_nonzero(diag > tol))]
        return sorted(rows[i] for i in keep)

    def null_space_step(self, x: np.ndarray, working: list):
        """
        Minimize the objective from x along directions keeping working rows fixed.

        Returns:
            (step, multipliers on working rows at x + step)
        """
        g = self.problem.gradient(x)
        p = self.problem.p
        if not working:
            step = -linalg.cho_solve(linalg.cho_factor(self.H), g)
            return step, np.zeros(0)
        A = self.problem.G[working]
        Q, R = linalg.qr(A.T)
        k = len(working)
        Yb, N = Q[:, :k], Q[:, k:]
        if k < p:
            reduced = N.T @ self.H @ N
            step = -N @ linalg.solve(reduced, N.T @ g, assume_a="pos")
        else:
            step = np.zeros(p)
        # A' lam = -(g + H step)
        lam = linalg.solve_triangular(R[:k, :k], -Yb.T @ (g + self.H @ step))
        return step, lam

    def solve_on(self, working: list) -> Optional[np.ndarray]:
        """Minimizer of the objective with the working rows held as equalities."""
        if not working:
            return least_squares(self.problem.Z, self.problem.Y, self.options)
        A = self.problem.G[working]
        b = self.problem.h[working]
        Q, R = linalg.qr(A.T)
        k = len(working)
        try:
            u = linalg.solve_triangular(R[:k, :k], b, trans="T")
        except linalg.LinAlgError:
            return None
        x0 = Q[:, :k] @ u
        step, _ = self.null_space_step(x0, working)
        return x0 + step

    def multipliers_at(self, x: np.ndarray, working: list) -> np.ndarray:
        lam = np.zeros(self.problem.n_constraints)
        if working:
            _, lam_w = self.null_space_step(x, working)
            lam[working] = lam_w
        return lam

    def primal_ok(self, x: np.ndarray) -> bool:
        if self.problem.n_constraints == 0:
            return True
        return bool(np.all(self.problem.G @ x <= self.problem.h + self.options.primal_tol))

    def dual_ok(self, lam: np.ndarray) -> bool:
        return bool(np.all(lam >= -1e-10 * self.grad_scale))


def _phase_one(problem: QpProblem, options: SolverOptions) -> np.ndarray:
    """Find a point of G beta <= h with the largest uniform slack (capped at 1)."""
    p = problem.p
    c = np.zeros(p + 1)
    c[-1] = -1.0
    A_ub = np.hstack([problem.G, np.ones((problem.n_constraints, 1))])
    bounds = [(None, None)] * p + [(None, 1.0)]
    res = optimize.linprog(c, A_ub=A_ub, b_ub=problem.h, bounds=bounds, method="highs")
    if res.status == 2 or (res.status == 0 and res.x[-1] < -options.primal_tol):
        raise Infeasible("no coefficient vector satisfies G beta <= h")
    if res.status != 0:
        raise Infeasible(f"phase-one search failed: {res.message}")
    return np.asarray(res.x[:p], dtype=float)


def _finish(ws: _Workspace, x: np.ndarray, working: list, iterations: int) -> QpSolution:
    """Re-solve on the sorted final working set so the result does not depend on the path."""
    working = sorted(working)
    polished = ws.solve_on(working) if working else x
    if polished is not None and ws.primal_ok(polished):
        lam = ws.multipliers_at(polished, working)
        if ws.dual_ok(lam):
            x = polished
    lam = np.maximum(ws.multipliers_at(x, working), 0.0)
    return QpSolution(
        beta=x,
        objective=ws.problem.objective(x),
        active_set=tuple(working),
        multipliers=lam,
        iterations=iterations,
    )


def solve(
    problem: QpProblem,
    options: SolverOptions = SolverOptions(),
    x0: Optional[np.ndarray] = None,
    working_set: Optional[Iterable[int]] = None,
) -> QpSolution:
    """
    Global minimizer of the convex least-squares QP.

    Args:
        problem: The QP
        options: Tolerances and iteration cap
        x0: Optional feasible starting point; found by a phase-one LP if omitted
        working_set: Optional guess of the optimal active set (warm start)

    Returns:
        QpSolution whose KKT residuals satisfy the tolerances in options

    Raises:
        RankDeficient: If Z'Z is singular
        Infeasible: If the constraints admit no point
        MaxIterations: If the iteration cap is reached
    """
    _check_rank(problem.Z, options)
    ws = _Workspace(problem, options)

    # unconstrained optimum first; it is the answer whenever it is feasible
    beta_ls = least_squares(problem.Z, problem.Y, options)
    if ws.primal_ok(beta_ls):
        return QpSolution(
            beta=beta_ls,
            objective=problem.objective(beta_ls),
            active_set=(),
            multipliers=np.zeros(problem.n_constraints),
            iterations=0,
        )

    x: Optional[np.ndarray] = None
    working: list = []

    if working_set:
        guess = ws.independent_rows(working_set)
        candidate = ws.solve_on(guess)
        if candidate is not None and ws.primal_ok(candidate):
            lam = ws.multipliers_at(candidate, guess)
            if ws.dual_ok(lam):
                return _finish(ws, candidate, guess, 1)
            x, working = candidate, guess
        else:
            logger.debug("warm-start working set %s infeasible, cold start", guess)

    if x is None:
        if x0 is not None and ws.primal_ok(np.asarray(x0, dtype=float)):
            x = np.asarray(x0, dtype=float).copy()
        else:
            x = _phase_one(problem, options)
        working = []

    G, h = problem.G, problem.h
    max_iter = options.max_iter_factor * (problem.p + problem.n_constraints)
    step_tol = 1e-12
    at_subspace_min = False

    for iteration in range(1, max_iter + 1):
        if at_subspace_min:
            step = np.zeros(problem.p)
        else:
            step, _ = ws.null_space_step(x, working)

        if np.max(np.abs(step), initial=0.0) <= step_tol * (1.0 + np.max(np.abs(x))):
            lam = ws.multipliers_at(x, working)
            lam_w = lam[working] if working else np.zeros(0)
            if lam_w.size == 0 or ws.dual_ok(lam_w):
                return _finish(ws, x, working, iteration)
            # drop the constraint with the most negative multiplier
            working.pop(int(np.argmin(lam_w)))
            at_subspace_min = False
            continue

        alpha = 1.0
        blocking = None
        Gp = G @ step
        inactive = np.setdiff1d(np.arange(problem.n_constraints), working)
        for i in inactive[Gp[inactive] > 1e-14 * (1.0 + np.abs(G[inactive]) @ np.abs(step))]:
            ratio = max(0.0, (h[i] - G[i] @ x)) / Gp[i]
            if ratio < alpha:
                alpha, blocking = ratio, int(i)

        x = x + alpha * step
        if blocking is not None:
            working = ws.independent_rows(working + [blocking])
            at_subspace_min = False
        else:
            at_subspace_min = True

    raise MaxIterations(f"active-set solver exceeded {max_iter} iterations")

