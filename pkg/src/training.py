"""
Recourse-augmented training.

Each mini-batch step minimizes
    mean[ bce(g(x), y) + lam * bce(g(x + delta*), 1) ]
where delta* solves the LP on the linearized loss and is held constant
when differentiating with respect to the parameters. The checkpoint with
the best validation F1 is kept.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .action_set import ActionSet
from .data import DatasetBundle, DatasetConfig
from .errors import ConfigError, NumericError
from .lp_solver import solve_min_linear
from .metrics import best_threshold, threshold_candidates
from .network import (
    DEFAULT_WIDTHS,
    AdamState,
    MlpParams,
    adam_init,
    adam_step,
    bce_loss,
    forward,
    grad_input,
    grad_params,
    init_params,
    predict_scores,
    sample_dropout_mask,
)
from .recourse import adversarial_actions

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.002
    batch_size: int = 15
    epochs: int = 15
    lam: float = 0.8
    seed: int = 0
    dropout_rate: float = 0.3
    widths: Tuple[int, ...] = DEFAULT_WIDTHS

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if not 0 < self.learning_rate <= 1:
            raise ConfigError(f"learning rate must be in (0, 1], got {self.learning_rate}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch size and epochs must be >= 1")
        if any(w < 1 for w in self.widths):
            raise ConfigError(f"hidden widths must be >= 1, got {self.widths}")

    @classmethod
    def for_dataset(cls, config: Optional[DatasetConfig], **overrides) -> "TrainConfig":
        """Dataset-level training defaults (batch size, epochs) with explicit overrides on top"""
        values: Dict[str, Any] = {}
        if config is not None:
            values.update({k: v for k, v in config.training.items() if k in ("batch_size", "epochs")})
        values.update({k: v for k, v in overrides.items() if v is not None})
        if "widths" in values:
            values["widths"] = tuple(values["widths"])
        return cls(**values)


@dataclass
class EpochRecord:
    epoch: int
    supervised_loss: float
    recourse_loss: float
    total_loss: float
    val_f1: float
    val_threshold: float

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainRun:
    config: TrainConfig
    params: MlpParams
    best_epoch: int
    history: List[EpochRecord] = field(default_factory=list)
    final_params: Optional[MlpParams] = None


def per_example_loss(
    params: MlpParams,
    aset: ActionSet,
    x: np.ndarray,
    y: int,
    lam: float,
) -> Tuple[float, float, np.ndarray]:
    """
    (supervised, recourse, delta*) for one example on the deterministic
    network. The example contributes supervised + lam * recourse.
    """
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    x = np.asarray(x, dtype=float)
    supervised = bce_loss(forward(params, x), y)
    delta = solve_min_linear(grad_input(params, x, 1), aset).delta
    recourse = bce_loss(forward(params, x + delta), 1)
    return supervised, recourse, delta


def make_generators(seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """Independent streams for batch shuffling and dropout masks"""
    shuffle_seed, dropout_seed = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(shuffle_seed), np.random.default_rng(dropout_seed)


def iterate_minibatches(rng: np.random.Generator, n: int, batch_size: int) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def training_step(
    params: MlpParams,
    state: AdamState,
    aset: ActionSet,
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    dropout_rng: np.random.Generator,
    dropout_rate: float,
) -> Tuple[MlpParams, AdamState, float, float]:
    """One Adam step; returns the new params/state and the mean supervised and recourse losses"""
    masks = sample_dropout_mask(params, dropout_rng, dropout_rate, len(X))
    weights = np.full(len(X), 1.0 / len(X))
    supervised = float(np.mean(bce_loss(predict_scores(params, X, masks), y)))
    grad = grad_params(params, X, y, weights, masks)

    recourse = 0.0
    if lam != 0:
        # delta* on the dropout-free network, held constant in the gradient
        shifted = X + adversarial_actions(params, aset, X)
        recourse = float(np.mean(bce_loss(predict_scores(params, shifted), 1)))
        grad = grad + grad_params(params, shifted, np.ones(len(X)), lam * weights)

    if not np.isfinite(supervised + lam * recourse):
        raise NumericError(f"non-finite loss (supervised={supervised}, recourse={recourse})")
    params, state = adam_step(state, params, grad)
    return params, state, supervised, recourse


def train(
    bundle: DatasetBundle,
    aset: ActionSet,
    config: TrainConfig,
    on_epoch: Optional[Callable[[EpochRecord, MlpParams], None]] = None,
    progress: bool = False,
) -> TrainRun:
    """
    Train from a seeded initialization and keep the epoch with the highest
    validation F1 (earliest on ties), thresholded at its F1-maximizing
    threshold.
    """
    X_train, y_train = bundle.rows("train")
    X_val, y_val = bundle.rows("validation")
    if not len(y_train):
        raise ConfigError("empty train split")
    if not len(y_val):
        raise ConfigError("checkpoint selection needs a non-empty validation split")

    shuffle_rng, dropout_rng = make_generators(config.seed)
    params = init_params(bundle.n_features, config.widths, seed=config.seed)
    state = adam_init(params, config.learning_rate)

    history: List[EpochRecord] = []
    best, best_epoch, best_f1 = None, 0, -np.inf
    for epoch in tqdm(range(1, config.epochs + 1), desc="epochs", disable=not progress):
        supervised_total = recourse_total = 0.0
        for step, batch in enumerate(iterate_minibatches(shuffle_rng, len(y_train), config.batch_size)):
            try:
                params, state, supervised, recourse = training_step(
                    params, state, aset, X_train[batch], y_train[batch],
                    config.lam, dropout_rng, config.dropout_rate,
                )
            except NumericError as e:
                raise NumericError(f"epoch {epoch}, batch {step}: {e}")
            supervised_total += supervised * len(batch)
            recourse_total += recourse * len(batch)

        scores = predict_scores(params, X_val)
        threshold, f1 = best_threshold(scores, y_val, threshold_candidates(scores))
        supervised_mean = supervised_total / len(y_train)
        recourse_term = config.lam * recourse_total / len(y_train)
        record = EpochRecord(
            epoch=epoch,
            supervised_loss=supervised_mean,
            recourse_loss=recourse_term,
            total_loss=supervised_mean + recourse_term,
            val_f1=f1,
            val_threshold=threshold,
        )
        history.append(record)
        logger.info(
            "epoch %d: supervised=%.4f recourse=%.4f val_f1=%.4f (threshold %.3f)",
            epoch, supervised_mean, recourse_term, f1, threshold,
        )
        if on_epoch is not None:
            on_epoch(record, params)
        if f1 > best_f1:
            best, best_epoch, best_f1 = params.with_threshold(threshold), epoch, f1

    logger.info("Selected epoch %d (val F1 %.4f)", best_epoch, best_f1)
    return TrainRun(config=config, params=best, best_epoch=best_epoch, history=history, final_params=params)


def select_threshold_max_f1(
    params: MlpParams,
    bundle: DatasetBundle,
    candidates: Optional[Sequence[float]] = None,
    split: str = "validation",
) -> float:
    """Threshold maximizing F1 on a split; ties go to the smallest threshold"""
    X, y = bundle.rows(split)
    scores = predict_scores(params, X)
    if candidates is None:
        candidates = threshold_candidates(scores)
    candidates = np.asarray(candidates, dtype=float)
    if not len(candidates) or np.any((candidates < 0) | (candidates > 1)):
        raise ConfigError("threshold candidates must be a non-empty list of values in [0, 1]")
    threshold, _ = best_threshold(scores, y, candidates)
    return threshold
