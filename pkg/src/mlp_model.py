"""
MLP Model v1.0
==============
Dense-math core for the continual-learning library.

A multi-layer perceptron with exact analytic gradients. The network exposes
its pre-softmax logits h(x) (used as distillation targets) and softmax
probabilities f(x) = softmax(h(x)).

Features:
- Deterministic seeded initialization (uniform Glorot range)
- Flattened parameter vector view for optimizer arithmetic
- Composite losses: cross-entropy terms and squared logit-matching terms
- Per-component gradients out of a single backward evaluation

All arithmetic is float64.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence
import logging

import numpy as np

from cl_errors import ConfigurationError, InputError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

# One example per row, float64.
Tensor2 = np.ndarray
# Flat float64 vector aligned with params_get() order.
GradVector = np.ndarray

NORMALIZATION_TOL = 1e-12


class Activation(Enum):
    """Hidden-layer nonlinearity"""
    RELU = "relu"
    TANH = "tanh"


class Component(Enum):
    """Loss components tracked separately in a LossBreakdown"""
    TASK = "task"
    REPLAY_CE = "replay_ce"
    LOGIT_MATCH = "logit_match"


@dataclass
class LossBreakdown:
    """Batch-mean loss components; total is their sum"""
    task_loss: float = 0.0
    replay_ce_loss: float = 0.0
    logit_match_loss: float = 0.0

    @property
    def total(self) -> float:
        return self.task_loss + self.replay_ce_loss + self.logit_match_loss

    def to_dict(self) -> dict:
        """Convert to dictionary"""
        return {
            "task_loss": self.task_loss,
            "replay_ce_loss": self.replay_ce_loss,
            "logit_match_loss": self.logit_match_loss,
            "total": self.total,
        }


@dataclass
class LossSpec:
    """Selects which loss components loss_and_grad evaluates on a batch"""
    cross_entropy: bool = True
    logit_match: bool = False

    def __post_init__(self):
        if not (self.cross_entropy or self.logit_match):
            raise ConfigurationError("LossSpec must enable at least one loss component")


@dataclass
class LossTerm:
    """
    One loss term over a block of rows.

    Contribution = sum of per-row losses / denominator. Cross-entropy terms
    carry integer labels as targets, LOGIT_MATCH terms carry a logit matrix.
    Two terms sharing a denominator behave like one merged batch.
    """
    component: Component
    inputs: Tensor2
    targets: np.ndarray
    denominator: Optional[int] = None

    @property
    def rows(self) -> int:
        return self.inputs.shape[0]


@dataclass
class TermEvaluation:
    """Result of evaluate_terms()"""
    losses: LossBreakdown
    grad: GradVector
    component_grads: dict = field(default_factory=dict)

    def grad_of(self, *components: Component) -> GradVector:
        """Sum of the gradients of the given components (zeros if absent)"""
        total = np.zeros_like(self.grad)
        for component in components:
            if component in self.component_grads:
                total = total + self.component_grads[component]
        return total


@dataclass
class MLP:
    """Fully connected network: affine -> activation -> ... -> affine (logits)"""
    layer_dims: tuple
    weights: list
    biases: list
    activation: Activation = Activation.RELU

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def class_count(self) -> int:
        return self.layer_dims[-1]

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


def model_init(layer_dims: Sequence[int], seed: int,
               activation: Activation = Activation.RELU) -> MLP:
    """
    Build an MLP with seeded uniform Glorot initialization and zero biases.

    Args:
        layer_dims: (input, hidden..., classes), at least two entries, all >= 1
        seed: integer seed; identical seeds give bit-identical parameters
        activation: hidden nonlinearity

    Returns:
        MLP instance
    """
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2:
        raise ConfigurationError(f"layer_dims needs at least 2 entries, got {dims}")
    if any(d < 1 for d in dims):
        raise ConfigurationError(f"layer_dims must all be >= 1, got {dims}")

    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))

    model = MLP(layer_dims=dims, weights=weights, biases=biases,
                activation=Activation(activation))
    logger.debug(f"Initialized MLP {dims} ({model.parameter_count} params, seed={seed})")
    return model


def as_tensor2(data, cols: Optional[int] = None) -> Tensor2:
    """Coerce data to a float64 2-D array; a 1-D vector becomes one row."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got shape {arr.shape}")
    if cols is not None and arr.shape[1] != cols:
        raise ShapeError(f"expected {cols} columns, got {arr.shape[1]}")
    return arr


def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.TANH:
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activation_grad(z: np.ndarray, a: np.ndarray, activation: Activation) -> np.ndarray:
    if activation is Activation.TANH:
        return 1.0 - a * a
    return (z > 0.0).astype(np.float64)


def _forward_cache(model: MLP, x: Tensor2):
    """Forward pass keeping layer inputs and hidden pre-activations for backprop."""
    acts = [x]
    preacts = []
    a = x
    last = len(model.weights) - 1
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        if layer == last:
            return acts, preacts, z
        a = _activate(z, model.activation)
        preacts.append(z)
        acts.append(a)
    raise AssertionError("unreachable")


def forward(model: MLP, inputs) -> Tensor2:
    """Pre-softmax logits h(x), one row per input row."""
    x = as_tensor2(inputs, cols=model.input_dim)
    _, _, logits = _forward_cache(model, x)
    return logits


def softmax(logits) -> Tensor2:
    """Row-wise softmax with max shift."""
    h = as_tensor2(logits)
    shifted = h - h.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(h: np.ndarray) -> np.ndarray:
    shifted = h - h.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def predict_proba(model: MLP, inputs) -> Tensor2:
    """Class probabilities f(x)."""
    return softmax(forward(model, inputs))


def params_get(model: MLP) -> np.ndarray:
    """Flattened copy of all parameters: W0 (row-major), b0, W1, b1, ..."""
    parts = []
    for w, b in zip(model.weights, model.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts).astype(np.float64, copy=True)


def params_set(model: MLP, flat) -> None:
    """Overwrite all parameters from a flat vector produced by params_get()."""
    values = np.asarray(flat, dtype=np.float64)
    if values.ndim != 1 or values.size != model.parameter_count:
        raise ShapeError(
            f"parameter vector length {values.size} != model parameter count "
            f"{model.parameter_count}"
        )
    offset = 0
    for w, b in zip(model.weights, model.biases):
        w[...] = values[offset:offset + w.size].reshape(w.shape)
        offset += w.size
        b[...] = values[offset:offset + b.size]
        offset += b.size


def _backward(model: MLP, acts, preacts, dlogits: np.ndarray, idx: np.ndarray) -> GradVector:
    """Backprop dlogits for the selected rows only; returns a flat gradient."""
    d = dlogits[idx]
    layer_grads = [None] * len(model.weights)
    for layer in range(len(model.weights) - 1, -1, -1):
        a_prev = acts[layer][idx]
        layer_grads[layer] = (a_prev.T @ d, d.sum(axis=0))
        if layer > 0:
            d = (d @ model.weights[layer].T) * _activation_grad(
                preacts[layer - 1][idx], acts[layer][idx], model.activation
            )
    parts = []
    for gw, gb in layer_grads:
        parts.append(gw.ravel())
        parts.append(gb)
    return np.concatenate(parts)


def _check_labels(labels, rows: int, class_count: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != rows:
        raise ShapeError(f"expected {rows} labels, got shape {y.shape}")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise InputError("labels must be integers")
        y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= class_count):
        raise InputError(
            f"label out of range [0, {class_count}): min={y.min()}, max={y.max()}"
        )
    return y.astype(np.int64)


def evaluate_terms(model: MLP, terms: Sequence[LossTerm]) -> TermEvaluation:
    """
    Evaluate a composite loss and its exact gradient.

    All terms share one forward pass over their stacked rows and one backward
    evaluation. Because the weight gradient is a sum over rows, the backward
    evaluation is split by component so each component's gradient is
    available separately at no extra cost.

    Args:
        model: network to differentiate
        terms: nonempty sequence of LossTerm

    Returns:
        TermEvaluation with LossBreakdown, total gradient and per-component gradients
    """
    terms = [t for t in terms if t.rows > 0]
    if not terms:
        raise InputError("cannot evaluate a loss over an empty batch")

    blocks = [as_tensor2(t.inputs, cols=model.input_dim) for t in terms]
    x = np.vstack(blocks)
    acts, preacts, logits = _forward_cache(model, x)
    dlogits = np.zeros_like(logits)

    losses = {c: 0.0 for c in Component}
    rows_by_component: dict = {}
    start = 0
    for term, block in zip(terms, blocks):
        n = block.shape[0]
        rows = np.arange(start, start + n)
        start += n
        denom = float(term.denominator if term.denominator is not None else n)
        h = logits[rows]

        if term.component is Component.LOGIT_MATCH:
            z = as_tensor2(term.targets)
            if z.shape != h.shape:
                raise ShapeError(f"logit targets shape {z.shape} != logits shape {h.shape}")
            diff = h - z
            losses[term.component] += float(np.sum(diff * diff)) / denom
            dlogits[rows] = 2.0 * diff / denom
        else:
            y = _check_labels(term.targets, n, model.class_count)
            logp = _log_softmax(h)
            picked = np.arange(n)
            losses[term.component] += float(-logp[picked, y].sum()) / denom
            g = np.exp(logp)
            g[picked, y] -= 1.0
            dlogits[rows] = g / denom

        rows_by_component.setdefault(term.component, []).append(rows)

    component_grads = {}
    total = None
    for component in Component:
        if component not in rows_by_component:
            continue
        idx = np.concatenate(rows_by_component[component])
        g = _backward(model, acts, preacts, dlogits, idx)
        component_grads[component] = g
        total = g if total is None else total + g

    breakdown = LossBreakdown(
        task_loss=losses[Component.TASK],
        replay_ce_loss=losses[Component.REPLAY_CE],
        logit_match_loss=losses[Component.LOGIT_MATCH],
    )
    if not np.isfinite(breakdown.total) or not np.all(np.isfinite(total)):
        raise NumericalError(f"non-finite loss or gradient (loss={breakdown.total})")

    return TermEvaluation(losses=breakdown, grad=total, component_grads=component_grads)


def loss_and_grad(model: MLP, batch_x, batch_y=None, logit_targets=None,
                  spec: Optional[LossSpec] = None) -> tuple:
    """
    Loss components and exact gradient on a single batch.

    Args:
        model: network
        batch_x: inputs, one row per example
        batch_y: integer labels (required when spec.cross_entropy)
        logit_targets: soft-logit targets (required iff spec.logit_match)
        spec: component selector, cross-entropy only by default

    Returns:
        (LossBreakdown, GradVector); cross-entropy is reported as task_loss
    """
    spec = spec or LossSpec()
    x = as_tensor2(batch_x, cols=model.input_dim)
    if x.shape[0] == 0:
        raise InputError("batch must be nonempty")
    if spec.logit_match and logit_targets is None:
        raise InputError("logit_targets required when logit matching is enabled")
    if not spec.logit_match and logit_targets is not None:
        raise InputError("logit_targets given but logit matching is disabled")
    if spec.cross_entropy and batch_y is None:
        raise InputError("labels required for the cross-entropy component")

    terms = []
    if spec.cross_entropy:
        terms.append(LossTerm(Component.TASK, x, np.asarray(batch_y)))
    if spec.logit_match:
        terms.append(LossTerm(Component.LOGIT_MATCH, x, as_tensor2(logit_targets)))

    result = evaluate_terms(model, terms)
    return result.losses, result.grad
