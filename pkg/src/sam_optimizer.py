"""
SAM Optimizer & Replay Step Strategies v1.0
===========================================
One training step per call, for every method of the replay family:

| Method     | Loss                              | Update                    | Backward passes |
|------------|-----------------------------------|---------------------------|-----------------|
| online     | L_t                               | SGD                       | 1 |
| er         | CE over merged (B_t + B)          | SGD                       | 1 |
| er_sam     | same as er                        | SAM                       | 2 |
| derpp      | L_t + CE(B1) + logit-match(B2)    | SGD                       | 1 |
| derpp_sam  | same as derpp                     | SAM                       | 2 |
| mgser_sam  | same as derpp                     | SAM + memory guidance     | 2 |

SAM: delta = rho * g / ||g|| is computed from the gradient at theta, the
gradient is re-evaluated at theta + delta, and theta (not theta + delta)
takes the SGD step with it. The perturbation never survives a step.

Memory guidance: to first order the SAM gradient of the summed loss is
grad[L_t + L_s + rho * ||grad(L_t + L_s)||], so the memory direction only
enters through a shared norm and can be dominated when the current-task and
memory gradients disagree. mgser_sam adds the memory gradient grad L^_s
evaluated at theta back to the perturbed-point gradient. L^_s here is the
replay cross-entropy plus the soft-logit matching term, both with weight 1.
The first pass already yields grad L^_s separately, so the method still
costs two backward passes.

After the update, every replay method offers the current batch to the
reservoir together with the logits of the updated model.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional
import logging

import numpy as np

from cl_errors import ConfigurationError, InputError, ShapeError, UsageError
from mlp_model import (
    MLP,
    Component,
    GradVector,
    LossBreakdown,
    LossTerm,
    TermEvaluation,
    evaluate_terms,
    forward,
    params_get,
    params_set,
)
from replay_buffer import MemoryBuffer, MemoryItem, reservoir_offer, sample_batch, stack_items

logger = logging.getLogger(__name__)

GRAD_NORM_EPSILON = 1e-12


class Method(Enum):
    """Training method selector"""
    ONLINE = "online"
    JOINT = "joint"
    ER = "er"
    ER_SAM = "er_sam"
    DERPP = "derpp"
    DERPP_SAM = "derpp_sam"
    MGSER_SAM = "mgser_sam"

    @property
    def uses_buffer(self) -> bool:
        return self not in (Method.ONLINE, Method.JOINT)

    @property
    def is_sam(self) -> bool:
        return self in (Method.ER_SAM, Method.DERPP_SAM, Method.MGSER_SAM)


@dataclass
class OptimConfig:
    """Step hyperparameters; batch_size is shared by B_t, B1 and B2"""
    lr: float = 0.05
    rho: float = 0.05
    batch_size: int = 32
    method: Method = Method.ER
    epsilon: float = GRAD_NORM_EPSILON

    def __post_init__(self):
        self.method = Method(self.method)
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if not self.rho >= 0:
            raise ConfigurationError(f"rho must be >= 0, got {self.rho}")
        if int(self.batch_size) < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be > 0, got {self.epsilon}")
        self.batch_size = int(self.batch_size)


@dataclass
class TaskBatch:
    """Current-task minibatch"""
    inputs: np.ndarray
    labels: np.ndarray
    task_id: int

    def __len__(self) -> int:
        return int(np.shape(self.inputs)[0])


@dataclass
class StepReport:
    """Per-step losses (at theta, before the update) and cost accounting"""
    losses: LossBreakdown
    grad_norm: float
    backward_passes: int
    delta_norm: float = 0.0
    replay_rows: int = 0

    def to_dict(self) -> dict:
        return {
            **self.losses.to_dict(),
            "grad_norm": self.grad_norm,
            "backward_passes": self.backward_passes,
            "delta_norm": self.delta_norm,
            "replay_rows": self.replay_rows,
        }


def sam_perturbation(grad: GradVector, rho: float,
                     epsilon: float = GRAD_NORM_EPSILON) -> GradVector:
    """delta* = rho * g / max(||g||_2, epsilon)"""
    if rho < 0:
        raise ConfigurationError(f"rho must be >= 0, got {rho}")
    g = np.asarray(grad, dtype=np.float64)
    return rho * g / max(float(np.linalg.norm(g)), epsilon)


def sgd_apply(params, grad: GradVector, lr: float) -> np.ndarray:
    """theta - lr * g"""
    theta = np.asarray(params, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    if theta.shape != g.shape:
        raise ShapeError(f"params length {theta.size} != gradient length {g.size}")
    return theta - lr * g


def expected_backward_passes(method: Method) -> int:
    return 2 if Method(method).is_sam else 1


def _require_batch(task_batch: TaskBatch) -> None:
    if len(task_batch) == 0:
        raise InputError("task batch must be nonempty")


def _replay_rows(terms) -> int:
    return sum(t.rows for t in terms if t.component is not Component.TASK)


def _er_terms(task_batch: TaskBatch, buffer: Optional[MemoryBuffer], cfg: OptimConfig,
              rng: np.random.Generator) -> list:
    """Merged batch B_t + B: both blocks share the merged-batch denominator."""
    memory = sample_batch(buffer, cfg.batch_size, rng) if buffer is not None else []
    if not memory:
        return [LossTerm(Component.TASK, task_batch.inputs, task_batch.labels)]
    mem_x, mem_y, _, _ = stack_items(memory)
    merged = len(task_batch) + len(memory)
    return [
        LossTerm(Component.TASK, task_batch.inputs, task_batch.labels, merged),
        LossTerm(Component.REPLAY_CE, mem_x, mem_y, merged),
    ]


def _derpp_terms(task_batch: TaskBatch, buffer: Optional[MemoryBuffer], cfg: OptimConfig,
                 rng: np.random.Generator) -> list:
    """L_t + CE(B1) + logit-match(B2), each a mean over its own batch."""
    terms = [LossTerm(Component.TASK, task_batch.inputs, task_batch.labels)]
    if buffer is None:
        return terms
    labelled = sample_batch(buffer, cfg.batch_size, rng)
    soft = sample_batch(buffer, cfg.batch_size, rng)
    if labelled:
        x1, y1, _, _ = stack_items(labelled)
        terms.append(LossTerm(Component.REPLAY_CE, x1, y1))
    if soft:
        x2, _, z2, _ = stack_items(soft)
        terms.append(LossTerm(Component.LOGIT_MATCH, x2, z2))
    return terms


def _sgd_descent(model: MLP, terms, cfg: OptimConfig) -> tuple:
    theta = params_get(model)
    evaluation = evaluate_terms(model, terms)
    params_set(model, sgd_apply(theta, evaluation.grad, cfg.lr))
    return evaluation, evaluation.grad, 0.0


def _sam_descent(model: MLP, terms, cfg: OptimConfig, memory_guidance: bool = False) -> tuple:
    theta = params_get(model)
    first: TermEvaluation = evaluate_terms(model, terms)
    delta = sam_perturbation(first.grad, cfg.rho, cfg.epsilon)

    params_set(model, theta + delta)
    try:
        second = evaluate_terms(model, terms)
    finally:
        params_set(model, theta)

    grad = second.grad
    if memory_guidance and _replay_rows(terms):
        grad = grad + first.grad_of(Component.REPLAY_CE, Component.LOGIT_MATCH)

    params_set(model, sgd_apply(theta, grad, cfg.lr))
    return first, grad, float(np.linalg.norm(delta))


def _offer_batch(model: MLP, task_batch: TaskBatch, buffer: MemoryBuffer,
                 rng: np.random.Generator) -> None:
    """Offer each current-task example with the post-update model's logits."""
    if buffer is None:
        raise UsageError("replay methods need a MemoryBuffer")
    logits = forward(model, task_batch.inputs)
    for x, y, z in zip(np.asarray(task_batch.inputs), np.asarray(task_batch.labels), logits):
        reservoir_offer(buffer, MemoryItem(x=x, y=y, z=z, task_id=task_batch.task_id), rng)


def _report(evaluation: TermEvaluation, grad, passes: int, delta_norm: float, terms) -> StepReport:
    return StepReport(
        losses=evaluation.losses,
        grad_norm=float(np.linalg.norm(grad)),
        backward_passes=passes,
        delta_norm=delta_norm,
        replay_rows=_replay_rows(terms),
    )


def step_online(model: MLP, task_batch: TaskBatch, buffer: Optional[MemoryBuffer],
                cfg: OptimConfig, rng: np.random.Generator) -> StepReport:
    """Plain SGD on the current batch; the buffer is neither read nor written."""
    _require_batch(task_batch)
    terms = [LossTerm(Component.TASK, task_batch.inputs, task_batch.labels)]
    evaluation, grad, delta_norm = _sgd_descent(model, terms, cfg)
    return _report(evaluation, grad, 1, delta_norm, terms)


def step_er(model: MLP, task_batch: TaskBatch, buffer: MemoryBuffer,
            cfg: OptimConfig, rng: np.random.Generator) -> StepReport:
    _require_batch(task_batch)
    terms = _er_terms(task_batch, buffer, cfg, rng)
    evaluation, grad, delta_norm = _sgd_descent(model, terms, cfg)
    _offer_batch(model, task_batch, buffer, rng)
    return _report(evaluation, grad, 1, delta_norm, terms)


def step_er_sam(model: MLP, task_batch: TaskBatch, buffer: MemoryBuffer,
                cfg: OptimConfig, rng: np.random.Generator) -> StepReport:
    _require_batch(task_batch)
    terms = _er_terms(task_batch, buffer, cfg, rng)
    evaluation, grad, delta_norm = _sam_descent(model, terms, cfg)
    _offer_batch(model, task_batch, buffer, rng)
    return _report(evaluation, grad, 2, delta_norm, terms)


def step_derpp(model: MLP, task_batch: TaskBatch, buffer: MemoryBuffer,
               cfg: OptimConfig, rng: np.random.Generator) -> StepReport:
    _require_batch(task_batch)
    terms = _derpp_terms(task_batch, buffer, cfg, rng)
    evaluation, grad, delta_norm = _sgd_descent(model, terms, cfg)
    _offer_batch(model, task_batch, buffer, rng)
    return _report(evaluation, grad, 1, delta_norm, terms)


def step_derpp_sam(model: MLP, task_batch: TaskBatch, buffer: MemoryBuffer,
                   cfg: OptimConfig, rng: np.random.Generator) -> StepReport:
    _require_batch(task_batch)
    terms = _derpp_terms(task_batch, buffer, cfg, rng)
    evaluation, grad, delta_norm = _sam_descent(model, terms, cfg)
    _offer_batch(model, task_batch, buffer, rng)
    return _report(evaluation, grad, 2, delta_norm, terms)


def step_mgser_sam(model: MLP, task_batch: TaskBatch, buffer: MemoryBuffer,
                   cfg: OptimConfig, rng: np.random.Generator) -> StepReport:
    """
    g = grad L^_total(theta + delta*) + grad L^_s(theta).

    B1 and B2 are drawn once and reused at both evaluation points.
    """
    _require_batch(task_batch)
    terms = _derpp_terms(task_batch, buffer, cfg, rng)
    evaluation, grad, delta_norm = _sam_descent(model, terms, cfg, memory_guidance=True)
    _offer_batch(model, task_batch, buffer, rng)
    return _report(evaluation, grad, 2, delta_norm, terms)


STEP_STRATEGIES: dict[Method, Callable[..., StepReport]] = {
    Method.ONLINE: step_online,
    Method.JOINT: step_online,
    Method.ER: step_er,
    Method.ER_SAM: step_er_sam,
    Method.DERPP: step_derpp,
    Method.DERPP_SAM: step_derpp_sam,
    Method.MGSER_SAM: step_mgser_sam,
}


def take_step(model: MLP, task_batch: TaskBatch, buffer: Optional[MemoryBuffer],
              cfg: OptimConfig, rng: np.random.Generator) -> StepReport:
    """Run one step of cfg.method."""
    report = STEP_STRATEGIES[cfg.method](model, task_batch, buffer, cfg, rng)
    logger.debug(
        f"{cfg.method.value} step: loss={report.losses.total:.6f} "
        f"|g|={report.grad_norm:.4f} |delta|={report.delta_norm:.4f}"
    )
    return report
