"""
Evaluation of a trained (and possibly calibrated) model.

Covers classification performance, recourse rates per algorithm,
robustness of recourses and of the model to noise on actionable
features, subgroup recourse disparity, a distinguisher probe between
original inputs and recourse points, and parameter sweeps.
"""
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.linear_model import SGDClassifier
from sklearn.model_selection import train_test_split
from sklearn.preprocessing import StandardScaler

from .action_set import ActionSet, action_set_for_bundle
from .data import DatasetBundle, prepare_dataset
from .errors import ConfigError, DataError
from .metrics import confusion_counts, precision_at_thresholds, threshold_candidates
from .network import MlpParams, predict_scores
from .recourse import (
    ADVERSARIAL,
    GRADIENT_DESCENT,
    RecourseResult,
    adversarial_actions,
    compute_recourses,
    resolve_algorithm,
)
from .training import TrainConfig, train

logger = logging.getLogger(__name__)

NOISE_STD = 0.1
NOISE_SCALES = ("std", "variance")
TARGET_PRECISION = 0.65
SWEEP_AXES = ("lambda", "threshold", "delta_max")
PROBE_TEST_SIZE = 0.3
PROBE_RETRIES = 10


@dataclass
class RecourseRates:
    algorithm: str
    recourse_neg: float
    recourse_all: float
    n: int
    n_positive: int
    n_negative: int
    n_recourse_found: int
    vacuous: bool = False
    robustness: Optional[float] = None
    n_robustness: int = 0


@dataclass
class DisparityReport:
    threshold: float
    precision: float
    precision_flag: bool
    majority_value: str
    n_majority: int
    n_minority: int
    recourse_all_majority: float
    recourse_all_minority: float
    gap: float


@dataclass
class MetricsReport:
    split: str
    threshold: float
    f1: float
    accuracy: float
    precision: float
    recall: float
    tp: int
    fp: int
    tn: int
    fn: int
    recourse: Dict[str, RecourseRates] = field(default_factory=dict)
    brittleness: Optional[float] = None
    probe_accuracy: Optional[float] = None
    disparity: Optional[DisparityReport] = None

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def as_row(self) -> Dict[str, Any]:
        """One flat record, recourse fields suffixed by algorithm"""
        row = {k: v for k, v in asdict(self).items() if k not in ("recourse", "disparity")}
        for name, rates in self.recourse.items():
            for key in ("recourse_neg", "recourse_all", "robustness"):
                row[f"{key}[{name}]"] = getattr(rates, key)
        if self.disparity is not None:
            row["disparity_gap"] = self.disparity.gap
        return row


def _split_rows(bundle: DatasetBundle, split: str) -> Tuple[np.ndarray, np.ndarray]:
    X, y = bundle.rows(split)
    if not len(y):
        raise DataError(f"empty {split} split")
    return X, y


def performance_metrics(params: MlpParams, bundle: DatasetBundle, split: str = "test") -> MetricsReport:
    """Confusion-matrix metrics at the model's threshold; 0/0 ratios are 0"""
    X, y = _split_rows(bundle, split)
    predicted = (predict_scores(params, X) >= params.threshold).astype(int)
    counts = confusion_counts(y, predicted)
    tp, fp, tn, fn = counts["tp"], counts["fp"], counts["tn"], counts["fn"]
    return MetricsReport(
        split=split,
        threshold=params.threshold,
        f1=2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0,
        accuracy=(tp + tn) / len(y),
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        **counts,
    )


def recourse_rates(
    scores: np.ndarray,
    post_scores: np.ndarray,
    threshold: float,
    algorithm: str,
) -> RecourseRates:
    """
    Rates from scores before and after the found actions. An instance has
    recourse when it is positive already or its action makes it positive.
    No negatives makes recourse_neg vacuously 1.
    """
    positive = np.asarray(scores) >= threshold
    found = ~positive & (np.asarray(post_scores) >= threshold)
    n_negative = int((~positive).sum())
    n_found = int(found.sum())
    return RecourseRates(
        algorithm=algorithm,
        recourse_neg=n_found / n_negative if n_negative else 1.0,
        recourse_all=(int(positive.sum()) + n_found) / len(positive) if len(positive) else 1.0,
        n=len(positive),
        n_positive=int(positive.sum()),
        n_negative=n_negative,
        n_recourse_found=n_found,
        vacuous=n_negative == 0,
    )


def recourse_metrics(
    params: MlpParams,
    aset: ActionSet,
    bundle: DatasetBundle,
    algorithm: str,
    split: str = "test",
    jobs: int = 1,
    seed: int = 0,
    results: Optional[List[RecourseResult]] = None,
    **options,
) -> RecourseRates:
    algorithm = resolve_algorithm(algorithm)
    X, _ = _split_rows(bundle, split)
    if results is None:
        results = compute_recourses(params, aset, X, algorithm, jobs=jobs, seed=seed, **options)
    post_scores = np.array([r.post_score for r in results])
    return recourse_rates(predict_scores(params, X), post_scores, params.threshold, algorithm)


def noise_std(noise: float, noise_scale: str = "std") -> float:
    """The normal noise level read as a standard deviation or as a variance"""
    if noise_scale not in NOISE_SCALES:
        raise ConfigError(f"noise scale must be one of {NOISE_SCALES}, got {noise_scale!r}")
    if noise < 0:
        raise ConfigError(f"noise must be >= 0, got {noise}")
    return float(np.sqrt(noise)) if noise_scale == "variance" else float(noise)


def actionable_noise(aset: ActionSet, n: int, std: float, seed: int) -> np.ndarray:
    """(n, d) normal noise, zero on non-actionable columns"""
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, std, size=(n, aset.dim)) * aset.actionable


def recourse_robustness(
    params: MlpParams,
    aset: ActionSet,
    X: np.ndarray,
    results: Sequence[RecourseResult],
    noise: float = NOISE_STD,
    seed: int = 0,
    noise_scale: str = "std",
) -> Tuple[Optional[float], int]:
    """
    Fraction of found recourses (originally negative, valid) that stay
    valid when noise is added to the action. Noisy actions are not
    projected back into the action set. Returns (None, 0) when there is
    nothing to measure.
    """
    std = noise_std(noise, noise_scale)
    X = np.asarray(X, dtype=float)
    scores = predict_scores(params, X) if len(X) else np.zeros(0)
    picked = [i for i, r in enumerate(results) if r.valid and scores[i] < params.threshold]
    if not picked:
        return None, 0
    deltas = np.vstack([results[i].delta for i in picked])
    noisy = X[picked] + deltas + actionable_noise(aset, len(picked), std, seed)
    robust = predict_scores(params, noisy) >= params.threshold
    return float(robust.mean()), len(picked)


def model_brittleness(
    params: MlpParams,
    aset: ActionSet,
    X: np.ndarray,
    noise: float = NOISE_STD,
    seed: int = 0,
    noise_scale: str = "std",
) -> float:
    """Fraction of inputs whose prediction survives noise on actionable columns"""
    std = noise_std(noise, noise_scale)
    X = np.asarray(X, dtype=float)
    if not len(X):
        raise DataError("model_brittleness needs at least one input")
    before = predict_scores(params, X) >= params.threshold
    after = predict_scores(params, X + actionable_noise(aset, len(X), std, seed)) >= params.threshold
    return float((before == after).mean())


def precision_threshold(scores: np.ndarray, labels: np.ndarray, target: float) -> Tuple[float, float, bool]:
    """
    Smallest threshold reaching the target precision. If none does, the
    most precise threshold is returned and the flag is set.
    """
    candidates = threshold_candidates(scores)
    precision = precision_at_thresholds(scores, labels, candidates)
    reached = np.flatnonzero(precision >= target)
    if len(reached):
        i = int(reached[0])
        return float(candidates[i]), float(precision[i]), False
    i = int(np.argmax(precision))
    logger.warning("Target precision %.2f not reachable, using %.3f at threshold %.3f",
                   target, precision[i], candidates[i])
    return float(candidates[i]), float(precision[i]), True


def recourse_disparity(
    params: MlpParams,
    aset: ActionSet,
    bundle: DatasetBundle,
    algorithm: str = ADVERSARIAL,
    split: str = "test",
    target_precision: float = TARGET_PRECISION,
    jobs: int = 1,
    seed: int = 0,
    majority: Optional[str] = None,
    **options,
) -> DisparityReport:
    """
    recourse_all for the majority group value against all other rows,
    at the threshold fixing validation precision at the target.

    The majority is ``majority``, else the config's ``group_majority``,
    else the most frequent value in the split.
    """
    groups = bundle.group_values(split)
    values, counts = np.unique(groups, return_counts=True)
    if len(values) < 2:
        raise ConfigError(f"recourse disparity needs at least two groups in the {split} split, got {list(values)}")
    if majority is None and bundle.config is not None:
        majority = bundle.config.group_majority
    if majority is None:
        majority = str(values[int(np.argmax(counts))])
    elif majority not in values:
        raise ConfigError(f"majority group {majority!r} does not occur in the {split} split")

    X_val, y_val = _split_rows(bundle, "validation")
    threshold, precision, flag = precision_threshold(predict_scores(params, X_val), y_val, target_precision)
    fixed = params.with_threshold(threshold)

    X, _ = _split_rows(bundle, split)
    results = compute_recourses(fixed, aset, X, algorithm, jobs=jobs, seed=seed, **options)
    post_scores = np.array([r.post_score for r in results])
    scores = predict_scores(fixed, X)
    in_majority = groups == majority
    rate_majority = recourse_rates(scores[in_majority], post_scores[in_majority], threshold, algorithm).recourse_all
    rate_minority = recourse_rates(scores[~in_majority], post_scores[~in_majority], threshold, algorithm).recourse_all
    return DisparityReport(
        threshold=threshold,
        precision=precision,
        precision_flag=flag,
        majority_value=majority,
        n_majority=int(in_majority.sum()),
        n_minority=int((~in_majority).sum()),
        recourse_all_majority=rate_majority,
        recourse_all_minority=rate_minority,
        gap=rate_majority - rate_minority,
    )


def _probe_split(features: np.ndarray, labels: np.ndarray, seed: int):
    try:
        return train_test_split(features, labels, test_size=PROBE_TEST_SIZE, random_state=seed, stratify=labels)
    except ValueError:
        # too few rows per class to stratify
        return train_test_split(features, labels, test_size=PROBE_TEST_SIZE, random_state=seed)


def distribution_probe(originals: np.ndarray, recourse_points: np.ndarray, seed: int = 0) -> float:
    """
    Held-out accuracy of a logistic-regression distinguisher between
    original inputs (label 0) and recourse points (label 1). Close to 0.5
    means the recourse points look like the data.
    """
    originals = np.atleast_2d(np.asarray(originals, dtype=float))
    recourse_points = np.atleast_2d(np.asarray(recourse_points, dtype=float))
    if not originals.size or not recourse_points.size:
        raise DataError("distribution probe needs original and recourse points")
    features = np.vstack([originals, recourse_points])
    labels = np.concatenate([np.zeros(len(originals), dtype=int), np.ones(len(recourse_points), dtype=int)])

    for attempt in range(PROBE_RETRIES):
        X_train, X_test, y_train, y_test = _probe_split(features, labels, seed + attempt)
        if len(np.unique(y_test)) == 2 and len(np.unique(y_train)) == 2:
            break
    else:
        raise DataError("distribution probe could not draw a split with both classes")

    scaler = StandardScaler().fit(X_train)
    model = SGDClassifier(
        loss="log_loss",
        learning_rate="constant",
        eta0=0.1,
        max_iter=200,
        tol=None,
        random_state=seed,
    )
    model.fit(scaler.transform(X_train), y_train)
    return float(model.score(scaler.transform(X_test), y_test))


def evaluate_model(
    params: MlpParams,
    aset: ActionSet,
    bundle: DatasetBundle,
    algorithms: Sequence[str] = (ADVERSARIAL,),
    split: str = "test",
    jobs: int = 1,
    seed: int = 0,
    noise: float = NOISE_STD,
    noise_scale: str = "std",
    probe: bool = True,
    target_precision: float = TARGET_PRECISION,
    **options,
) -> MetricsReport:
    """Full report: performance, per-algorithm recourse and robustness, brittleness, probe and disparity"""
    report = performance_metrics(params, bundle, split)
    X, _ = _split_rows(bundle, split)
    computed: Dict[str, List[RecourseResult]] = {}
    for name in algorithms:
        name = resolve_algorithm(name)
        results = compute_recourses(params, aset, X, name, jobs=jobs, seed=seed, **options)
        computed[name] = results
        rates = recourse_metrics(params, aset, bundle, name, split, results=results)
        rates.robustness, rates.n_robustness = recourse_robustness(
            params, aset, X, results, noise, seed, noise_scale)
        report.recourse[name] = rates
        logger.info("%s: recourse_neg=%.3f recourse_all=%.3f", name, rates.recourse_neg, rates.recourse_all)

    report.brittleness = model_brittleness(params, aset, X, noise, seed, noise_scale)

    if probe:
        originals, points = found_recourse_points(
            params, aset, X, results=computed.get(distinguisher_algorithm(aset)), jobs=jobs, seed=seed)
        if len(originals) >= 2:
            report.probe_accuracy = distribution_probe(originals, points, seed)
        else:
            logger.warning("Skipping the distribution probe: fewer than two recourses found")

    report.disparity = grouped_disparity(
        params, aset, bundle, algorithms[0], split, target_precision, jobs, seed, **options)
    return report


def distinguisher_algorithm(aset: ActionSet) -> str:
    """Gradient descent where it applies; the LP action under affine constraints"""
    return GRADIENT_DESCENT if aset.is_box else ADVERSARIAL


def found_recourse_points(
    params: MlpParams,
    aset: ActionSet,
    X: np.ndarray,
    results: Optional[Sequence[RecourseResult]] = None,
    jobs: int = 1,
    seed: int = 0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    (originals, x + delta) for the negatives whose recourse was found.
    ``results`` must come from distinguisher_algorithm(aset) on ``X``.
    """
    X = np.asarray(X, dtype=float)
    if results is None:
        results = compute_recourses(params, aset, X, distinguisher_algorithm(aset), jobs=jobs, seed=seed)
    if not len(X):
        return X, X
    negative = predict_scores(params, X) < params.threshold
    picked = [i for i, r in enumerate(results) if negative[i] and r.valid]
    if not picked:
        empty = np.zeros((0, X.shape[1]))
        return empty, empty
    deltas = np.vstack([results[i].delta for i in picked])
    return X[picked], X[picked] + deltas


def grouped_disparity(
    params: MlpParams,
    aset: ActionSet,
    bundle: DatasetBundle,
    algorithm: str = ADVERSARIAL,
    split: str = "test",
    target_precision: float = TARGET_PRECISION,
    jobs: int = 1,
    seed: int = 0,
    **options,
) -> Optional[DisparityReport]:
    """recourse_disparity when the split holds at least two groups, else None"""
    if bundle.groups is None or len(np.unique(bundle.group_values(split))) < 2:
        return None
    return recourse_disparity(params, aset, bundle, algorithm, split, target_precision, jobs, seed, **options)


@dataclass(frozen=True)
class SweepSettings:
    """Everything a sweep holds fixed while one axis varies"""
    config_path: str
    csv_path: Optional[str] = None
    seeds: Tuple[int, ...] = (0, 1, 2)
    train: TrainConfig = field(default_factory=TrainConfig)
    delta_max: Optional[float] = None
    algorithms: Tuple[str, ...] = (ADVERSARIAL,)
    split: str = "test"
    jobs: int = 1


def _threshold_rows(
    params: MlpParams,
    aset: ActionSet,
    bundle: DatasetBundle,
    thresholds: Sequence[float],
    settings: SweepSettings,
    seed: int,
) -> List[MetricsReport]:
    """One model, many thresholds; the LP action does not depend on the threshold"""
    X, _ = _split_rows(bundle, settings.split)
    scores = predict_scores(params, X)
    cached = {}
    for name in settings.algorithms:
        if resolve_algorithm(name) == ADVERSARIAL:
            cached[ADVERSARIAL] = predict_scores(params, X + adversarial_actions(params, aset, X))

    reports = []
    for threshold in thresholds:
        model = params.with_threshold(threshold)
        report = performance_metrics(model, bundle, settings.split)
        for name in settings.algorithms:
            name = resolve_algorithm(name)
            if name in cached:
                report.recourse[name] = recourse_rates(scores, cached[name], threshold, name)
            else:
                report.recourse[name] = recourse_metrics(model, aset, bundle, name, settings.split,
                                                         jobs=settings.jobs, seed=seed)
        reports.append(report)
    return reports


def sweep(
    axis: str,
    values: Sequence[float],
    settings: SweepSettings,
    on_row: Optional[Callable[[Dict[str, Any]], None]] = None,
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Vary lambda, the threshold or delta_max over ``values`` for every seed.

    The seed drives both the data split and training. lambda and delta_max
    retrain per value and, on grouped data, also report the recourse
    disparity; a threshold sweep trains once per seed. Returns the
    per-(value, seed) rows and their mean / standard error over seeds.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not len(values):
        raise ConfigError("sweep needs at least one value")

    rows: List[Dict[str, Any]] = []
    for seed in settings.seeds:
        bundle = prepare_dataset(settings.config_path, settings.csv_path, seed)
        train_config = replace(settings.train, seed=seed)

        if axis == "threshold":
            aset = action_set_for_bundle(bundle, settings.delta_max)
            params = train(bundle, aset, train_config).params
            reports = _threshold_rows(params, aset, bundle, values, settings, seed)
        else:
            reports = []
            for value in values:
                if axis == "lambda":
                    aset = action_set_for_bundle(bundle, settings.delta_max)
                    params = train(bundle, aset, replace(train_config, lam=value)).params
                else:
                    aset = action_set_for_bundle(bundle, value)
                    params = train(bundle, aset, train_config).params
                report = performance_metrics(params, bundle, settings.split)
                for name in settings.algorithms:
                    name = resolve_algorithm(name)
                    report.recourse[name] = recourse_metrics(params, aset, bundle, name, settings.split,
                                                             jobs=settings.jobs, seed=seed)
                report.disparity = grouped_disparity(params, aset, bundle, settings.algorithms[0], settings.split,
                                                     jobs=settings.jobs, seed=seed)
                reports.append(report)

        for value, report in zip(values, reports):
            row = {"axis": axis, "value": float(value), "seed": seed, **report.as_row()}
            rows.append(row)
            if on_row is not None:
                on_row(row)

    table = pd.DataFrame(rows)
    return table, summarize_sweep(table)


def summarize_sweep(table: pd.DataFrame) -> pd.DataFrame:
    """Mean and standard error over seeds for every numeric column"""
    numeric = [c for c in table.select_dtypes(include="number").columns if c not in ("value", "seed")]
    grouped = table.groupby(["axis", "value"], sort=False)[numeric]
    summary = grouped.agg(["mean", "sem"])
    summary.columns = [f"{name}_{stat}" for name, stat in summary.columns]
    summary["n_seeds"] = grouped.size()
    return summary.reset_index()
