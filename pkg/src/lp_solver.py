"""
Linear programs over the action set.

solve_min_linear minimizes c . delta over the action set. Box-only sets
are solved per coordinate in closed form; sets with affine constraints go
through a dense two-phase tableau simplex using Bland's rule.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .action_set import ActionSet
from .errors import NumericError, ShapeError, SolverError

PIVOT_TOL = 1e-9

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LpSolution:
    x: np.ndarray
    objective: float
    status: str
    iterations: int = 0

    @property
    def delta(self) -> np.ndarray:
        return self.x


def solve_min_linear(c: np.ndarray, aset: ActionSet) -> LpSolution:
    """argmin over delta in the action set of c . delta"""
    c = np.asarray(c, dtype=float)
    if c.shape != (aset.dim,):
        raise ShapeError(f"objective of shape {c.shape} for an action set of dimension {aset.dim}")
    if not np.all(np.isfinite(c)):
        raise NumericError("non-finite LP objective")

    if aset.is_box:
        # ties (c_i == 0) go to the zero action
        delta = np.where(c > 0, aset.lower, np.where(c < 0, aset.upper, 0.0))
        return LpSolution(x=delta, objective=float(c @ delta), status=OPTIMAL)

    free = aset.upper > aset.lower
    lower = aset.lower[free]
    span = aset.upper[free] - lower
    # x = delta - lower >= 0; x <= span; -a.x <= a.lower + b
    rows = [np.eye(len(span))]
    rhs = [span]
    for constraint in aset.constraints:
        a = constraint.coeffs[free]
        rows.append(-a[None, :])
        rhs.append(np.array([a @ lower + constraint.offset]))
    solution = simplex_core(c[free], np.vstack(rows), np.concatenate(rhs))
    if solution.status != OPTIMAL:
        return LpSolution(x=np.zeros(aset.dim), objective=float("nan"), status=solution.status,
                          iterations=solution.iterations)

    delta = np.zeros(aset.dim)
    delta[free] = np.clip(solution.x + lower, lower, lower + span)
    return LpSolution(x=delta, objective=float(c @ delta), status=OPTIMAL, iterations=solution.iterations)


def simplex_core(
    objective: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    max_pivots: Optional[int] = None,
) -> LpSolution:
    """
    Minimize objective . x subject to A x <= b and x >= 0.

    Rows with a negative right-hand side receive an artificial variable and
    are handled in phase one. Bland's rule (smallest entering index, ties in
    the ratio test broken by smallest basic index) guarantees termination.
    The pivot cap defaults to 10 * (rows + cols)^2.
    """
    c = np.asarray(objective, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or c.shape != (A.shape[1],) or b.shape != (A.shape[0],):
        raise ShapeError(f"inconsistent LP shapes: objective {c.shape}, A {A.shape}, b {b.shape}")
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise NumericError("non-finite LP data")

    m, n = A.shape
    if max_pivots is None:
        max_pivots = 10 * (m + n) ** 2

    negative = b < 0
    art_rows = np.flatnonzero(negative)
    n_art = len(art_rows)
    T = np.zeros((m, n + m + n_art))
    T[:, :n] = A
    T[:, n:n + m] = np.eye(m)
    T[negative, :n + m] *= -1.0
    rhs = np.abs(b)
    basis = n + np.arange(m)
    art_cols = n + m + np.arange(n_art)
    T[art_rows, art_cols] = 1.0
    basis[art_rows] = art_cols

    pivots = 0
    if n_art:
        phase_one = np.zeros(T.shape[1])
        phase_one[art_cols] = 1.0
        _, pivots = _run_simplex(T, rhs, basis, phase_one, pivots, max_pivots)
        residual = float(phase_one[basis] @ rhs)
        if residual > PIVOT_TOL * max(1.0, float(np.abs(b).max())):
            return LpSolution(x=np.zeros(n), objective=float("nan"), status=INFEASIBLE, iterations=pivots)
        keep = np.ones(m, dtype=bool)
        for i in np.flatnonzero(basis >= n + m):
            candidates = np.flatnonzero(np.abs(T[i, :n + m]) > PIVOT_TOL)
            if len(candidates):
                _pivot(T, rhs, basis, i, candidates[0])
                pivots += 1
            else:
                keep[i] = False  # redundant row
        T, rhs, basis = T[keep, :n + m], rhs[keep], basis[keep]

    phase_two = np.zeros(T.shape[1])
    phase_two[:n] = c
    status, pivots = _run_simplex(T, rhs, basis, phase_two, pivots, max_pivots)
    if status == UNBOUNDED:
        return LpSolution(x=np.full(n, np.nan), objective=float("-inf"), status=UNBOUNDED, iterations=pivots)

    solution = np.zeros(T.shape[1])
    solution[basis] = np.maximum(rhs, 0.0)
    x = solution[:n]
    return LpSolution(x=x, objective=float(c @ x), status=OPTIMAL, iterations=pivots)


def _run_simplex(
    T: np.ndarray,
    rhs: np.ndarray,
    basis: np.ndarray,
    cost: np.ndarray,
    pivots: int,
    max_pivots: int,
) -> Tuple[str, int]:
    """Primal simplex iterations on a tableau in canonical form (in place)"""
    while True:
        reduced = cost - cost[basis] @ T
        entering = np.flatnonzero(reduced < -PIVOT_TOL)
        if not len(entering):
            return OPTIMAL, pivots
        j = entering[0]
        column = T[:, j]
        rows = np.flatnonzero(column > PIVOT_TOL)
        if not len(rows):
            return UNBOUNDED, pivots
        ratios = rhs[rows] / column[rows]
        ties = rows[ratios <= ratios.min() + PIVOT_TOL]
        i = ties[np.argmin(basis[ties])]
        if pivots >= max_pivots:
            raise SolverError(f"simplex exceeded {max_pivots} pivots")
        _pivot(T, rhs, basis, i, j)
        pivots += 1


def _pivot(T: np.ndarray, rhs: np.ndarray, basis: np.ndarray, i: int, j: int) -> None:
    pivot = T[i, j]
    T[i] /= pivot
    rhs[i] /= pivot
    factors = T[:, j].copy()
    factors[i] = 0.0
    T -= np.outer(factors, T[i])
    rhs -= factors * rhs[i]
    basis[i] = j
