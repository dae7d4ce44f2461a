import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from src.action_set import AffineConstraint, build_action_set, contains
from src.data import FeatureSpec
from src.errors import ShapeError, SolverError
from src.lp_solver import INFEASIBLE, OPTIMAL, UNBOUNDED, simplex_core, solve_min_linear

MONOTONICITY = ("free", "increase-only", "decrease-only")


def random_specs(rng, dim):
    return [
        FeatureSpec(name=f"f{i}", actionable=bool(rng.random() < 0.8), monotonicity=MONOTONICITY[rng.integers(3)])
        for i in range(dim)
    ]


def grid_minimum(c, aset):
    """Separable brute force over a 0.01 grid per coordinate"""
    total = 0.0
    for ci, lo, hi in zip(c, aset.lower, aset.upper):
        points = np.append(np.arange(lo, hi, 0.01), hi) if hi > lo else np.array([lo])
        total += float(np.min(ci * points))
    return total


def vertex_minimum(c, aset):
    """Enumerate every vertex of the polytope: all bound and constraint planes taken dim at a time"""
    dim = aset.dim
    planes = []
    for i in range(dim):
        e = np.eye(dim)[i]
        planes.append((e, aset.lower[i]))
        planes.append((e, aset.upper[i]))
    for constraint in aset.constraints:
        planes.append((constraint.coeffs, -constraint.offset))
    best = np.inf
    for chosen in itertools.combinations(planes, dim):
        A = np.array([p[0] for p in chosen])
        if abs(np.linalg.det(A)) < 1e-10:
            continue
        vertex = np.linalg.solve(A, np.array([p[1] for p in chosen]))
        if contains(aset, vertex, tol=1e-7):
            best = min(best, float(c @ vertex))
    return best


def with_slack_constraint(aset):
    """Same feasible set, forced onto the simplex path"""
    return build_action_set(
        [FeatureSpec(name=n, actionable=lo < hi, monotonicity=_monotonicity(lo, hi)) for n, lo, hi in
         zip(aset.columns, aset.lower, aset.upper)],
        aset.delta_max,
        [AffineConstraint(np.zeros(aset.dim), 1.0)],
    )


def _monotonicity(lo, hi):
    if lo == 0 and hi > 0:
        return "increase-only"
    if hi == 0 and lo < 0:
        return "decrease-only"
    return "free"


def test_zero_objective_gives_zero_action():
    aset = build_action_set([FeatureSpec(name="a", actionable=True), FeatureSpec(name="b", actionable=True)])
    solution = solve_min_linear(np.zeros(2), aset)
    assert solution.status == OPTIMAL
    assert np.array_equal(solution.delta, [0.0, 0.0])
    assert solution.objective == 0.0


def test_box_closed_form_examples():
    aset = build_action_set([FeatureSpec(name="a", actionable=True), FeatureSpec(name="b", actionable=True)])
    solution = solve_min_linear(np.array([1.0, -2.0]), aset)
    assert np.array_equal(solution.delta, [-0.75, 0.75])
    assert solution.objective == pytest.approx(-2.25)

    increase = build_action_set([FeatureSpec(name="a", actionable=True, monotonicity="increase-only")])
    assert solve_min_linear(np.array([-3.0]), increase).delta[0] == 0.75
    assert solve_min_linear(np.array([3.0]), increase).delta[0] == 0.0


def test_shape_mismatch():
    aset = build_action_set([FeatureSpec(name="a", actionable=True)])
    with pytest.raises(ShapeError):
        solve_min_linear(np.zeros(2), aset)


def test_random_boxes_match_grid_and_simplex(rng):
    """200 random (c, box) pairs in up to 6 dimensions"""
    for _ in range(200):
        dim = int(rng.integers(1, 7))
        aset = build_action_set(random_specs(rng, dim), delta_max=float(rng.uniform(0.1, 1.5)))
        c = rng.normal(size=dim)
        closed = solve_min_linear(c, aset)
        simplex = solve_min_linear(c, with_slack_constraint(aset))

        assert closed.status == OPTIMAL and simplex.status == OPTIMAL
        assert contains(aset, closed.delta)
        assert closed.objective <= 0.0
        assert closed.objective == pytest.approx(grid_minimum(c, aset), abs=1e-6)
        assert simplex.objective == pytest.approx(closed.objective, abs=1e-9)


def test_general_polytopes_match_vertex_enumeration(rng):
    """Box plus random constraints through the origin's neighbourhood, 50 instances"""
    for _ in range(50):
        dim = int(rng.integers(2, 4))
        extras = [AffineConstraint(rng.normal(size=dim), float(rng.uniform(0.0, 0.5)))
                  for _ in range(int(rng.integers(1, 5)))]
        specs = [FeatureSpec(name=f"f{i}", actionable=True) for i in range(dim)]
        aset = build_action_set(specs, 0.75, extras)
        c = rng.normal(size=dim)

        solution = solve_min_linear(c, aset)
        assert solution.status == OPTIMAL
        assert contains(aset, solution.delta, tol=1e-7)
        assert solution.objective == pytest.approx(vertex_minimum(c, aset), abs=1e-7)

        reference = linprog(
            c,
            A_ub=np.array([-e.coeffs for e in extras]),
            b_ub=np.array([e.offset for e in extras]),
            bounds=list(zip(aset.lower, aset.upper)),
            method="highs",
        )
        assert solution.objective == pytest.approx(reference.fun, abs=1e-7)


def test_simplex_core_one_dimensional():
    """min -x s.t. x <= 1, x >= 0"""
    solution = simplex_core(np.array([-1.0]), np.array([[1.0]]), np.array([1.0]))
    assert solution.status == OPTIMAL
    assert solution.x == pytest.approx([1.0])
    assert solution.objective == pytest.approx(-1.0)


def test_simplex_core_duplicated_constraints():
    """Redundant rows do not change the optimum"""
    c = np.array([-1.0, -2.0])
    A = np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    b = np.array([4.0, 3.0, 2.0])
    single = simplex_core(c, A, b)
    doubled = simplex_core(c, np.vstack([A, A]), np.concatenate([b, b]))
    assert single.objective == pytest.approx(-6.0)
    assert doubled.objective == pytest.approx(single.objective)
    assert doubled.x == pytest.approx(single.x)


def test_simplex_core_phase_one():
    """x >= 1 written as -x <= -1 needs an artificial variable"""
    solution = simplex_core(np.array([1.0, 1.0]), np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]]),
                            np.array([-1.0, -0.5, 5.0]))
    assert solution.status == OPTIMAL
    assert solution.x == pytest.approx([1.0, 0.5])


def test_simplex_core_infeasible_and_unbounded():
    infeasible = simplex_core(np.array([1.0]), np.array([[1.0], [-1.0]]), np.array([1.0, -2.0]))
    assert infeasible.status == INFEASIBLE

    unbounded = simplex_core(np.array([-1.0, 0.0]), np.array([[0.0, 1.0]]), np.array([1.0]))
    assert unbounded.status == UNBOUNDED


def test_simplex_core_pivot_cap():
    with pytest.raises(SolverError):
        simplex_core(np.array([-1.0]), np.array([[1.0]]), np.array([1.0]), max_pivots=0)


def test_simplex_core_shape_errors():
    with pytest.raises(ShapeError):
        simplex_core(np.array([1.0, 2.0]), np.array([[1.0]]), np.array([1.0]))


def test_scaling_objective_keeps_argmin(rng):
    extras = [AffineConstraint(np.array([-1.0, -1.0, 0.5]), 0.6)]
    aset = build_action_set([FeatureSpec(name=f"f{i}", actionable=True) for i in range(3)], 0.75, extras)
    c = rng.normal(size=3)
    base = solve_min_linear(c, aset)
    scaled = solve_min_linear(3.5 * c, aset)
    assert scaled.objective == pytest.approx(3.5 * base.objective, abs=1e-9)
