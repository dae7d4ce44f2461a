"""
Recourse algorithms for a trained scoring network.

  gradient-descent      projected gradient descent on loss + lambda' * |delta|_2
  adversarial-training  one LP on the linearized loss (same step used in training)
  linear-approximation  minimal-L1 action for a local linear surrogate of g

Every algorithm returns delta = 0 for inputs that are already classified
positive.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
from sklearn.linear_model import LinearRegression, Ridge

from .action_set import ActionSet, project_box
from .errors import ConfigError, ShapeError, UnsupportedProjectionError
from .lp_solver import OPTIMAL, LpSolution, simplex_core, solve_min_linear
from .network import MlpParams, forward, grad_input, grad_score_input, input_gradients, predict_scores

logger = logging.getLogger(__name__)

GRADIENT_DESCENT = "gradient-descent"
ADVERSARIAL = "adversarial-training"
LINEAR = "linear-approximation"
ALGORITHMS = (GRADIENT_DESCENT, ADVERSARIAL, LINEAR)
ALIASES = {"gd": GRADIENT_DESCENT, "lp": ADVERSARIAL, "linear": LINEAR}

SURROGATE_MARGIN = 1e-4
RIDGE_FALLBACK = 1e-6


def resolve_algorithm(name: str) -> str:
    name = ALIASES.get(name, name)
    if name not in ALGORITHMS:
        raise ConfigError(f"unknown recourse algorithm {name!r} (expected one of {ALGORITHMS} or {sorted(ALIASES)})")
    return name


@dataclass(frozen=True)
class RecourseResult:
    delta: np.ndarray
    valid: bool
    post_score: float
    algorithm: str
    iterations: int = 0
    surrogate_warning: bool = False

    @property
    def cost_l1(self) -> float:
        return float(np.abs(self.delta).sum())

    @property
    def cost_l2(self) -> float:
        return float(np.linalg.norm(self.delta))


def _result(params: MlpParams, x: np.ndarray, delta: np.ndarray, algorithm: str,
            iterations: int = 0, surrogate_warning: bool = False) -> RecourseResult:
    post_score = forward(params, x + delta)
    return RecourseResult(
        delta=delta,
        valid=post_score >= params.threshold,
        post_score=post_score,
        algorithm=algorithm,
        iterations=iterations,
        surrogate_warning=surrogate_warning,
    )


def _already_positive(params: MlpParams, x: np.ndarray, algorithm: str) -> Optional[RecourseResult]:
    score = forward(params, x)
    if score >= params.threshold:
        return RecourseResult(delta=np.zeros_like(x), valid=True, post_score=score, algorithm=algorithm)
    return None


def _check_input(aset: ActionSet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (aset.dim,):
        raise ShapeError(f"input of shape {x.shape} for an action set of dimension {aset.dim}")
    return x


def adversarial_actions(params: MlpParams, aset: ActionSet, X: np.ndarray) -> np.ndarray:
    """
    Row-wise argmin over the action set of grad_x loss(g(x), 1) . delta.
    Does not depend on the decision threshold.
    """
    grads = input_gradients(params, X, 1)
    if not len(grads):
        return np.zeros_like(grads)
    return np.vstack([solve_min_linear(g, aset).delta for g in grads])


def recourse_adversarial(params: MlpParams, aset: ActionSet, x: np.ndarray) -> RecourseResult:
    x = _check_input(aset, x)
    shortcut = _already_positive(params, x, ADVERSARIAL)
    if shortcut is not None:
        return shortcut
    delta = solve_min_linear(grad_input(params, x, 1), aset).delta
    return _result(params, x, delta, ADVERSARIAL)


def recourse_gradient_descent(
    params: MlpParams,
    aset: ActionSet,
    x: np.ndarray,
    lam0: float = 0.001,
    steps: int = 500,
    step_size: float = 0.05,
    anneal_every: int = 50,
    patience: int = 50,
) -> RecourseResult:
    """
    Projected gradient descent from delta = 0.

    lambda' is halved after every ``anneal_every`` iterations that pass
    without any valid iterate. Once a valid iterate exists the search stops
    after ``patience`` iterations without a smaller valid one. Returns the
    smallest-norm valid iterate, else the last iterate.
    """
    x = _check_input(aset, x)
    shortcut = _already_positive(params, x, GRADIENT_DESCENT)
    if shortcut is not None:
        return shortcut
    if not aset.is_box:
        raise UnsupportedProjectionError("gradient-descent recourse needs a box-only action set")

    lam = lam0
    delta = np.zeros_like(x)
    best, best_norm = None, np.inf
    misses = stale = 0
    iterations = 0
    for iterations in range(1, steps + 1):
        grad = grad_input(params, x + delta, 1)
        norm = np.linalg.norm(delta)
        if norm > 0:
            grad = grad + lam * delta / norm
        delta = project_box(aset, delta - step_size * grad)

        if forward(params, x + delta) >= params.threshold:
            norm = np.linalg.norm(delta)
            if norm < best_norm:
                best, best_norm, stale = delta.copy(), norm, 0
            else:
                stale += 1
        elif best is None:
            misses += 1
            if misses % anneal_every == 0:
                lam /= 2.0
        else:
            stale += 1
        if best is not None and stale >= patience:
            break

    return _result(params, x, best if best is not None else delta, GRADIENT_DESCENT, iterations)


@dataclass(frozen=True)
class LocalSurrogate:
    coef: np.ndarray
    intercept: float
    rank_deficient: bool
    r2: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X) @ self.coef + self.intercept


def fit_local_surrogate(
    score_fn: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    n_samples: int = 1000,
    kernel_width: Optional[float] = None,
    seed: int = 0,
    sample_std: float = 0.3,
) -> LocalSurrogate:
    """Kernel-weighted least squares of score_fn on Gaussian samples around x"""
    x = np.asarray(x, dtype=float)
    dim = len(x)
    if n_samples < dim + 1:
        raise ConfigError(f"need at least {dim + 1} surrogate samples, got {n_samples}")
    if kernel_width is None:
        kernel_width = 0.75 * np.sqrt(dim)

    rng = np.random.default_rng(seed)
    Z = x + rng.normal(0.0, sample_std, size=(n_samples, dim))
    scores = np.asarray(score_fn(Z), dtype=float)
    weights = np.exp(-np.sum((Z - x) ** 2, axis=1) / kernel_width ** 2)

    design = np.column_stack([np.ones(n_samples), Z]) * np.sqrt(weights)[:, None]
    rank_deficient = np.linalg.matrix_rank(design) < dim + 1
    if rank_deficient:
        logger.warning("Rank-deficient surrogate design around x, falling back to ridge (alpha=%g)", RIDGE_FALLBACK)
        model = Ridge(alpha=RIDGE_FALLBACK)
    else:
        model = LinearRegression()
    model.fit(Z, scores, sample_weight=weights)
    return LocalSurrogate(
        coef=np.asarray(model.coef_, dtype=float),
        intercept=float(model.intercept_),
        rank_deficient=bool(rank_deficient),
        r2=float(model.score(Z, scores, sample_weight=weights)),
    )


def local_linear_surrogate(
    params: MlpParams,
    x: np.ndarray,
    n_samples: int = 1000,
    kernel_width: Optional[float] = None,
    seed: int = 0,
) -> LocalSurrogate:
    return fit_local_surrogate(lambda Z: predict_scores(params, Z), x, n_samples, kernel_width, seed)


def min_l1_action(beta: np.ndarray, gap: float, aset: ActionSet) -> LpSolution:
    """
    Smallest |delta|_1 in the action set with beta . delta >= gap, written
    as an LP over delta = p - q with p, q >= 0.
    """
    free = aset.upper > aset.lower
    k = int(free.sum())
    lower, upper = aset.lower[free], aset.upper[free]
    b = np.asarray(beta, dtype=float)[free]
    eye = np.eye(k)
    rows = [np.hstack([eye, -eye]), np.hstack([-eye, eye]), np.hstack([-b, b])[None, :]]
    rhs = [upper, -lower, np.array([-gap])]
    for constraint in aset.constraints:
        a = constraint.coeffs[free]
        rows.append(np.hstack([-a, a])[None, :])
        rhs.append(np.array([constraint.offset]))

    solution = simplex_core(np.ones(2 * k), np.vstack(rows), np.concatenate(rhs))
    delta = np.zeros(aset.dim)
    if solution.status == OPTIMAL:
        delta[free] = np.clip(solution.x[:k] - solution.x[k:], lower, upper)
    return LpSolution(x=delta, objective=float(np.abs(delta).sum()), status=solution.status,
                      iterations=solution.iterations)


def recourse_linear_approx(
    params: MlpParams,
    aset: ActionSet,
    x: np.ndarray,
    seed: int = 0,
    surrogate: str = "lime",
    n_samples: int = 1000,
) -> RecourseResult:
    """
    Minimal-L1 action that lifts a linear model of g past the threshold,
    then checked against the true network. ``surrogate`` is ``lime`` (local
    weighted regression) or ``gradient`` (first-order Taylor expansion).
    """
    x = _check_input(aset, x)
    shortcut = _already_positive(params, x, LINEAR)
    if shortcut is not None:
        return shortcut

    warning = False
    if surrogate == "lime":
        fitted = local_linear_surrogate(params, x, n_samples=n_samples, seed=seed)
        beta, warning = fitted.coef, fitted.rank_deficient
    elif surrogate == "gradient":
        beta = grad_score_input(params, x)
    else:
        raise ConfigError(f"unknown surrogate {surrogate!r} (expected 'lime' or 'gradient')")

    gap = params.threshold - forward(params, x) + SURROGATE_MARGIN
    solution = min_l1_action(beta, gap, aset)
    if solution.status != OPTIMAL:
        return RecourseResult(delta=np.zeros_like(x), valid=False, post_score=forward(params, x),
                              algorithm=LINEAR, iterations=solution.iterations, surrogate_warning=warning)
    return _result(params, x, solution.delta, LINEAR, solution.iterations, warning)


def compute_recourse(params: MlpParams, aset: ActionSet, x: np.ndarray, algorithm: str,
                     seed: int = 0, **options) -> RecourseResult:
    algorithm = resolve_algorithm(algorithm)
    if algorithm == ADVERSARIAL:
        return recourse_adversarial(params, aset, x)
    if algorithm == GRADIENT_DESCENT:
        return recourse_gradient_descent(params, aset, x, **options)
    return recourse_linear_approx(params, aset, x, seed=seed, **options)


def compute_recourses(params: MlpParams, aset: ActionSet, X: np.ndarray, algorithm: str,
                      jobs: int = 1, seed: int = 0, **options) -> List[RecourseResult]:
    """Per-row recourse in row order; row i uses seed + i"""
    algorithm = resolve_algorithm(algorithm)
    X = np.asarray(X, dtype=float)

    def one(i: int) -> RecourseResult:
        return compute_recourse(params, aset, X[i], algorithm, seed=seed + i, **options)

    if jobs <= 1:
        return [one(i) for i in range(len(X))]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, range(len(X))))
