"""
Scoring network g(x) in (0, 1): tanh hidden layers with inverted dropout
and a sigmoid output unit, with exact reverse-mode gradients with respect
to both the inputs and the parameters, binary cross-entropy and Adam.
"""
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from .errors import ConfigError, NumericError, ShapeError

DEFAULT_WIDTHS = (100, 100, 100)
ACTIVATION = "tanh"
SCORE_CLAMP = 1e-12

DropoutMask = List[np.ndarray]


@dataclass
class MlpParams:
    """
    Weights and biases of the scoring network plus the decision threshold.

    ``weights[l]`` has shape (fan_in, fan_out); the last layer has a single
    output unit. An empty ``widths`` gives a plain logistic model.
    """
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    threshold: float = 0.5
    activation: str = ACTIVATION
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ShapeError("weights and biases must be non-empty lists of equal length")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ShapeError(f"layer {l}: weight {W.shape} does not match bias {b.shape}")
            if l > 0 and W.shape[0] != self.weights[l - 1].shape[1]:
                raise ShapeError(f"layer {l}: fan-in {W.shape[0]} != previous width {self.weights[l - 1].shape[1]}")
        if self.weights[-1].shape[1] != 1:
            raise ShapeError("output layer must have a single unit")
        if self.activation != ACTIVATION:
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold must be in [0, 1], got {self.threshold}")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def widths(self) -> Tuple[int, ...]:
        return tuple(W.shape[1] for W in self.weights[:-1])

    def arrays(self) -> List[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        n = len(self.weights)
        return replace(self, weights=list(arrays[:n]), biases=list(arrays[n:]))

    def with_threshold(self, threshold: float) -> "MlpParams":
        return replace(self, threshold=float(threshold))


@dataclass
class ParamGrad:
    """Gradient with the same layout as MlpParams"""
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def arrays(self) -> List[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def __add__(self, other: "ParamGrad") -> "ParamGrad":
        return ParamGrad(
            weights=[a + b for a, b in zip(self.weights, other.weights)],
            biases=[a + b for a, b in zip(self.biases, other.biases)],
        )


def init_params(
    input_dim: int,
    widths: Sequence[int] = DEFAULT_WIDTHS,
    seed: int = 0,
    threshold: float = 0.5,
) -> MlpParams:
    """Uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in))"""
    rng = np.random.default_rng(seed)
    dims = [input_dim, *widths, 1]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights=weights, biases=biases, threshold=threshold, seed=seed)


def zero_params(input_dim: int, widths: Sequence[int] = DEFAULT_WIDTHS, threshold: float = 0.5) -> MlpParams:
    dims = [input_dim, *widths, 1]
    return MlpParams(
        weights=[np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
        biases=[np.zeros(b) for b in dims[1:]],
        threshold=threshold,
    )


def sample_dropout_mask(
    params: MlpParams,
    rng: np.random.Generator,
    rate: float,
    batch_size: Optional[int] = None,
) -> DropoutMask:
    """
    One mask per hidden layer, already carrying the inverted-dropout scale
    1/(1-rate) so that inference needs no rescaling.
    """
    masks = []
    for width in params.widths:
        shape = (width,) if batch_size is None else (batch_size, width)
        keep = rng.random(shape) >= rate
        masks.append(keep / (1.0 - rate))
    return masks


def _as_batch(params: MlpParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeError(f"expected inputs with {params.input_dim} features, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NumericError("non-finite input to the scoring network")
    return X


def _check_masks(params: MlpParams, masks: Optional[DropoutMask]) -> None:
    if masks is None:
        return
    if len(masks) != len(params.widths):
        raise ShapeError(f"expected {len(params.widths)} dropout masks, got {len(masks)}")
    for mask, width in zip(masks, params.widths):
        if mask.shape[-1] != width:
            raise ShapeError(f"dropout mask of shape {mask.shape} for a layer of width {width}")


def _forward_cache(params: MlpParams, X: np.ndarray, masks: Optional[DropoutMask] = None):
    """Run the network and keep what backprop needs"""
    _check_masks(params, masks)
    inputs = [X]
    tanhs = []
    a = X
    for l, (W, b) in enumerate(zip(params.weights[:-1], params.biases[:-1])):
        t = np.tanh(a @ W + b)
        tanhs.append(t)
        a = t * masks[l] if masks is not None else t
        inputs.append(a)
    z = (a @ params.weights[-1] + params.biases[-1])[:, 0]
    return inputs, tanhs, expit(z)


def _backward(params: MlpParams, inputs, tanhs, dz: np.ndarray, masks: Optional[DropoutMask] = None):
    """Propagate d(objective)/d(output logit) back to inputs and parameters"""
    n_layers = len(params.weights)
    dW = [None] * n_layers
    db = [None] * n_layers
    delta = dz[:, None]
    for l in range(n_layers - 1, -1, -1):
        dW[l] = inputs[l].T @ delta
        db[l] = delta.sum(axis=0)
        da = delta @ params.weights[l].T
        if l == 0:
            return da, ParamGrad(weights=dW, biases=db)
        if masks is not None:
            da = da * masks[l - 1]
        delta = da * (1.0 - tanhs[l - 1] ** 2)


def forward(params: MlpParams, x: np.ndarray, mask: Optional[DropoutMask] = None) -> float:
    """Score of a single feature vector; no mask means inference mode"""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ShapeError(f"forward expects a single feature vector, got shape {x.shape}")
    _, _, scores = _forward_cache(params, _as_batch(params, x), mask)
    return float(scores[0])


def predict_scores(params: MlpParams, X: np.ndarray, masks: Optional[DropoutMask] = None) -> np.ndarray:
    """Scores for a batch of rows; no masks means inference mode"""
    _, _, scores = _forward_cache(params, _as_batch(params, X), masks)
    return scores


def predict(params: MlpParams, X: np.ndarray) -> np.ndarray:
    return (predict_scores(params, X) >= params.threshold).astype(int)


def bce_loss(score: Union[float, np.ndarray], label: Union[int, np.ndarray]) -> Union[float, np.ndarray]:
    s = np.clip(score, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    loss = -label * np.log(s) - (1 - label) * np.log(1.0 - s)
    return float(loss) if np.ndim(loss) == 0 else loss


def input_gradients(params: MlpParams, X: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Row-wise gradient of bce_loss(g(x), label) with respect to x"""
    X = _as_batch(params, X)
    labels = np.broadcast_to(np.asarray(labels, dtype=float), (X.shape[0],))
    inputs, tanhs, scores = _forward_cache(params, X)
    dx, _ = _backward(params, inputs, tanhs, scores - labels)
    return dx


def grad_input(params: MlpParams, x: np.ndarray, label: int) -> np.ndarray:
    return input_gradients(params, x, label)[0]


def grad_score_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Gradient of the score g(x) itself with respect to x"""
    inputs, tanhs, scores = _forward_cache(params, _as_batch(params, x))
    dx, _ = _backward(params, inputs, tanhs, scores * (1.0 - scores))
    return dx[0]


def grad_params(
    params: MlpParams,
    X: np.ndarray,
    labels: np.ndarray,
    weights: Optional[np.ndarray] = None,
    masks: Optional[DropoutMask] = None,
) -> ParamGrad:
    """
    Exact gradient of sum_i weights[i] * bce_loss(g(x_i), labels[i]) with
    respect to every weight and bias. Masks may be per-row (batch, width).
    """
    X = _as_batch(params, X)
    if X.shape[0] == 0:
        raise ShapeError("empty batch")
    labels = np.asarray(labels, dtype=float)
    weights = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    if labels.shape != (X.shape[0],) or weights.shape != (X.shape[0],):
        raise ShapeError("labels and weights must have one entry per row")
    inputs, tanhs, scores = _forward_cache(params, X, masks)
    _, grad = _backward(params, inputs, tanhs, weights * (scores - labels), masks)
    return grad


@dataclass
class AdamState:
    learning_rate: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_init(params: MlpParams, learning_rate: float = 0.002, **kwargs) -> AdamState:
    zeros = [np.zeros_like(a) for a in params.arrays()]
    return AdamState(
        learning_rate=learning_rate,
        m=zeros,
        v=[z.copy() for z in zeros],
        **kwargs,
    )


def adam_step(state: AdamState, params: MlpParams, grad: ParamGrad) -> Tuple[MlpParams, AdamState]:
    """One Adam descent step; returns new params and state, inputs untouched"""
    grads = grad.arrays()
    current = params.arrays()
    if len(grads) != len(current) or len(state.m) != len(current):
        raise ShapeError("optimizer state, parameters and gradient have different layouts")
    for g, p in zip(grads, current):
        if g.shape != p.shape:
            raise ShapeError(f"gradient of shape {g.shape} for parameter of shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient, Adam step refused")

    step = state.step + 1
    m = [state.beta1 * m + (1 - state.beta1) * g for m, g in zip(state.m, grads)]
    v = [state.beta2 * v + (1 - state.beta2) * g * g for v, g in zip(state.v, grads)]
    m_scale = 1.0 / (1 - state.beta1 ** step)
    v_scale = 1.0 / (1 - state.beta2 ** step)
    updated = [
        p - state.learning_rate * (mi * m_scale) / (np.sqrt(vi * v_scale) + state.eps)
        for p, mi, vi in zip(current, m, v)
    ]
    new_state = replace(state, step=step, m=m, v=v)
    return params.with_arrays(updated), new_state
