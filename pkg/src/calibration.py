"""
Decision-threshold calibration with a recourse guarantee.

Recourse points x + A(x) computed on held-out inputs all carry the label 1.
The threshold is the largest order statistic of their scores that, by the
binomial tail, leaves at most k* of them uncovered; with probability at
least 1 - alpha the population miscoverage is then at most epsilon.
"""
import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.stats import binom

from .action_set import ActionSet
from .data import DatasetBundle
from .errors import ConfigError
from .metrics import f1_at_thresholds
from .network import MlpParams, predict_scores
from .recourse import compute_recourses, resolve_algorithm

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 0.05
DEFAULT_ALPHA = 0.05
DEFAULT_INCREMENTS = 10


@dataclass(frozen=True)
class CalibrationResult:
    tau: float
    k_star: int
    n: int
    epsilon: float
    alpha: float
    algorithm: Optional[str] = None
    calibration_split: str = "validation"

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "CalibrationResult":
        return cls(**{k: document[k] for k in cls.__dataclass_fields__ if k in document})


def _check_level(name: str, value: float) -> None:
    if not 0.0 < value < 1.0:
        raise ConfigError(f"{name} must be in (0, 1), got {value}")


def binomial_cdf(k: int, n: int, p: float) -> float:
    """P[Binomial(n, p) <= k]"""
    if n < 0 or not 0 <= k <= n:
        raise ConfigError(f"binomial_cdf needs 0 <= k <= n, got k={k}, n={n}")
    _check_level("p", p)
    return float(min(1.0, binom.cdf(k, n, p)))


def allowed_errors(n: int, epsilon: float, alpha: float) -> int:
    """Largest k with P[Binomial(n, epsilon) <= k] <= alpha, or -1"""
    cdf = binom.cdf(np.arange(n + 1), n, epsilon)
    admissible = np.flatnonzero(cdf <= alpha)
    return int(admissible[-1]) if len(admissible) else -1


def pac_threshold(
    scores: np.ndarray,
    epsilon: float = DEFAULT_EPSILON,
    alpha: float = DEFAULT_ALPHA,
    algorithm: Optional[str] = None,
) -> CalibrationResult:
    """
    Threshold on scores of points whose correct label is 1.

    A point is miscovered when its score is strictly below the threshold,
    so placing the threshold at the (k*+1)-th smallest score leaves at most
    k* calibration points miscovered. Falls back to 0 when k* = -1.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 1 or not len(scores):
        raise ConfigError("pac_threshold needs a non-empty list of scores")
    _check_level("epsilon", epsilon)
    _check_level("alpha", alpha)

    n = len(scores)
    k_star = allowed_errors(n, epsilon, alpha)
    tau = float(np.sort(scores)[k_star]) if k_star >= 0 else 0.0
    if k_star < 0:
        logger.warning(
            "%d calibration points are too few for epsilon=%g, alpha=%g; threshold falls back to 0",
            n, epsilon, alpha,
        )
    return CalibrationResult(tau=tau, k_star=k_star, n=n, epsilon=epsilon, alpha=alpha, algorithm=algorithm)


def build_z_prime(
    params: MlpParams,
    aset: ActionSet,
    X: np.ndarray,
    algorithm: str,
    jobs: int = 1,
    seed: int = 0,
    **options,
) -> np.ndarray:
    """Scores g(x + A(x)) of the recourse points for each calibration input"""
    results = compute_recourses(params, aset, X, algorithm, jobs=jobs, seed=seed, **options)
    return np.array([r.post_score for r in results], dtype=float)


def pare_calibrate(
    params: MlpParams,
    aset: ActionSet,
    X: np.ndarray,
    epsilon: float = DEFAULT_EPSILON,
    alpha: float = DEFAULT_ALPHA,
    algorithm: str = "adversarial-training",
    jobs: int = 1,
    seed: int = 0,
    calibration_split: str = "validation",
    **options,
) -> Tuple[MlpParams, CalibrationResult]:
    """Returns the model with its threshold set to the calibrated value"""
    algorithm = resolve_algorithm(algorithm)
    _check_level("epsilon", epsilon)
    _check_level("alpha", alpha)
    scores = build_z_prime(params, aset, X, algorithm, jobs=jobs, seed=seed, **options)
    result = pac_threshold(scores, epsilon, alpha, algorithm)
    result = CalibrationResult(**{**result.as_dict(), "calibration_split": calibration_split})
    logger.info(
        "Calibrated threshold %.4f on %d recourse points (k*=%d, epsilon=%g, alpha=%g, %s)",
        result.tau, result.n, result.k_star, epsilon, alpha, algorithm,
    )
    return params.with_threshold(result.tau), result


def select_threshold_f1_under_pare(
    params: MlpParams,
    bundle: DatasetBundle,
    pare_bound: float,
    increments: int = DEFAULT_INCREMENTS,
    split: str = "validation",
) -> float:
    """
    F1-maximizing threshold among ``increments`` equally spaced values in
    [0, pare_bound]. Lowering the threshold only adds covered recourse
    points, so any of them keeps the guarantee.
    """
    if not 0.0 <= pare_bound <= 1.0:
        raise ConfigError(f"PARE bound must be in [0, 1], got {pare_bound}")
    if increments < 2:
        raise ConfigError(f"need at least 2 increments, got {increments}")
    X, y = bundle.rows(split)
    candidates = np.linspace(0.0, pare_bound, increments)
    f1 = f1_at_thresholds(predict_scores(params, X), y, candidates)
    return float(candidates[int(np.argmax(f1))])
