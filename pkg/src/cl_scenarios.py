"""
Continual Learning Scenarios v1.0
=================================
Task streams for the three evaluation scenarios.

- task_il / class_il: class-split streams (each task owns a disjoint set of
  classes). task_il restricts prediction to the queried task's classes at
  evaluation time; class_il predicts over every class.
- domain_il: every task has the full label set, inputs are transformed per
  task (pixel permutation or image rotation).

The model is single-headed in every scenario; task-IL is realized purely
by output masking in predict_batch().
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence
import logging
import math

import numpy as np

from cl_errors import ConfigurationError, InputError, ShapeError
from mlp_model import MLP, forward

logger = logging.getLogger(__name__)

DEFAULT_TEST_FRACTION = 0.2


class Scenario(Enum):
    """Evaluation scenario"""
    TASK_IL = "task_il"
    CLASS_IL = "class_il"
    DOMAIN_IL = "domain_il"

    @property
    def is_split(self) -> bool:
        return self is not Scenario.DOMAIN_IL


@dataclass
class Dataset:
    """Examples as rows in [0, 1], integer labels in [0, class_count)"""
    inputs: np.ndarray
    labels: np.ndarray
    class_count: int
    image_shape: Optional[tuple] = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if self.inputs.ndim != 2:
            raise ShapeError(f"inputs must be 2-D, got shape {self.inputs.shape}")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ShapeError(
                f"{self.inputs.shape[0]} input rows but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise InputError(f"labels must lie in [0, {self.class_count})")
        if self.image_shape is not None:
            self.image_shape = tuple(int(s) for s in self.image_shape)
            if math.prod(self.image_shape) != self.feature_dim:
                raise ShapeError(
                    f"image shape {self.image_shape} does not match feature dim {self.feature_dim}"
                )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.inputs.shape[1])

    def subset(self, index) -> "Dataset":
        return Dataset(self.inputs[index], self.labels[index], self.class_count, self.image_shape)

    def with_inputs(self, inputs: np.ndarray) -> "Dataset":
        return Dataset(inputs, self.labels.copy(), self.class_count, self.image_shape)


@dataclass
class Task:
    """One step of a stream; domain tasks record their input transform"""
    task_id: int
    train: Dataset
    test: Dataset
    class_ids: tuple
    permutation: Optional[np.ndarray] = None
    angle_deg: Optional[float] = None

    def __post_init__(self):
        self.class_ids = tuple(int(c) for c in self.class_ids)
        if not self.class_ids:
            raise InputError(f"task {self.task_id} has no classes")
        allowed = set(self.class_ids)
        for split, data in (("train", self.train), ("test", self.test)):
            stray = set(np.unique(data.labels).tolist()) - allowed
            if stray:
                raise InputError(
                    f"task {self.task_id} {split} labels {sorted(stray)} "
                    f"outside its classes {list(self.class_ids)}"
                )


@dataclass
class TaskStream:
    tasks: list = field(default_factory=list)
    scenario: Scenario = Scenario.CLASS_IL

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, index: int) -> Task:
        return self.tasks[index]

    @property
    def class_count(self) -> int:
        return self.tasks[0].train.class_count

    @property
    def feature_dim(self) -> int:
        return self.tasks[0].train.feature_dim


def holdout_split(dataset: Dataset, test_fraction: float = DEFAULT_TEST_FRACTION) -> tuple:
    """
    Deterministic per-class holdout.

    For each class, the last ceil(test_fraction * n_c) examples in dataset
    order go to the test split. A class with a single example stays in train.
    """
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigurationError(f"test_fraction must be in [0, 1), got {test_fraction}")
    test_mask = np.zeros(len(dataset), dtype=bool)
    for label in np.unique(dataset.labels):
        rows = np.flatnonzero(dataset.labels == label)
        n_test = math.ceil(test_fraction * rows.size) if rows.size > 1 else 0
        if n_test:
            test_mask[rows[-n_test:]] = True
    return dataset.subset(~test_mask), dataset.subset(test_mask)


def _train_test(base: Dataset, test: Optional[Dataset], test_fraction: float) -> tuple:
    if test is None:
        return holdout_split(base, test_fraction)
    if test.feature_dim != base.feature_dim or test.class_count != base.class_count:
        raise ShapeError("test set shape does not match the base dataset")
    return base, test


def make_split_stream(base: Dataset, n_tasks: int, classes_per_task: int,
                      scenario: Scenario = Scenario.CLASS_IL, test: Optional[Dataset] = None,
                      test_fraction: float = DEFAULT_TEST_FRACTION,
                      shuffle_classes: bool = False, seed: int = 0) -> TaskStream:
    """
    Class-split stream.

    Args:
        base: source dataset (train split, or everything when test is None)
        n_tasks: number of tasks
        classes_per_task: classes owned by each task
        scenario: task_il or class_il
        test: optional separate test set; otherwise a per-class holdout is used
        shuffle_classes: assign classes in seeded random order instead of ascending
        seed: seed for shuffle_classes

    Returns:
        TaskStream whose task t holds classes [t*k, (t+1)*k) of the class order
    """
    scenario = Scenario(scenario)
    if not scenario.is_split:
        raise ConfigurationError("split streams support task_il and class_il only")
    if n_tasks < 1 or classes_per_task < 1:
        raise ConfigurationError("n_tasks and classes_per_task must be >= 1")
    needed = n_tasks * classes_per_task
    if needed > base.class_count:
        raise ConfigurationError(
            f"{n_tasks} tasks x {classes_per_task} classes = {needed} > "
            f"{base.class_count} available classes"
        )

    order = np.arange(base.class_count)
    if shuffle_classes:
        order = np.random.default_rng(seed).permutation(base.class_count)

    train_all, test_all = _train_test(base, test, test_fraction)
    tasks = []
    for t in range(n_tasks):
        class_ids = tuple(sorted(int(c) for c in order[t * classes_per_task:(t + 1) * classes_per_task]))
        tasks.append(Task(
            task_id=t,
            train=train_all.subset(np.isin(train_all.labels, class_ids)),
            test=test_all.subset(np.isin(test_all.labels, class_ids)),
            class_ids=class_ids,
        ))
    logger.info(f"Built {scenario.value} split stream: {n_tasks} tasks x {classes_per_task} classes")
    return TaskStream(tasks=tasks, scenario=scenario)


def permute_features(inputs: np.ndarray, permutation: np.ndarray) -> np.ndarray:
    return np.asarray(inputs)[:, permutation]


def make_permuted_stream(base: Dataset, n_tasks: int, seed: int,
                         test: Optional[Dataset] = None,
                         test_fraction: float = DEFAULT_TEST_FRACTION) -> TaskStream:
    """Domain stream; task 0 is the identity, later tasks use seeded feature permutations."""
    if base.feature_dim < 2:
        raise ConfigurationError("permuted streams need feature_dim >= 2")
    if n_tasks < 1:
        raise ConfigurationError("n_tasks must be >= 1")

    rng = np.random.default_rng(seed)
    train_all, test_all = _train_test(base, test, test_fraction)
    class_ids = tuple(range(base.class_count))
    tasks = []
    for t in range(n_tasks):
        perm = np.arange(base.feature_dim) if t == 0 else rng.permutation(base.feature_dim)
        tasks.append(Task(
            task_id=t,
            train=train_all.with_inputs(permute_features(train_all.inputs, perm)),
            test=test_all.with_inputs(permute_features(test_all.inputs, perm)),
            class_ids=class_ids,
            permutation=perm,
        ))
    logger.info(f"Built permuted domain stream: {n_tasks} tasks")
    return TaskStream(tasks=tasks, scenario=Scenario.DOMAIN_IL)


def rotate_images(inputs: np.ndarray, image_shape: Sequence[int], angle_deg: float) -> np.ndarray:
    """
    Rotate flattened images about the grid center.

    Each destination pixel reads the nearest source pixel under the inverse
    rotation; sources outside the grid read as 0.
    """
    h, w = (int(s) for s in image_shape)
    x = np.asarray(inputs, dtype=np.float64)
    if x.shape[1] != h * w:
        raise ShapeError(f"inputs have {x.shape[1]} features, image shape {h}x{w} needs {h * w}")

    theta = np.deg2rad(angle_deg)
    cos, sin = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dy, dx = rows - cy, cols - cx

    src_col = np.rint(cos * dx + sin * dy + cx).astype(np.int64).ravel()
    src_row = np.rint(-sin * dx + cos * dy + cy).astype(np.int64).ravel()
    valid = (src_col >= 0) & (src_col < w) & (src_row >= 0) & (src_row < h)

    out = np.zeros_like(x)
    out[:, valid] = x[:, src_row[valid] * w + src_col[valid]]
    return out


def make_rotated_stream(base: Dataset, n_tasks: int, seed: int,
                        test: Optional[Dataset] = None,
                        test_fraction: float = DEFAULT_TEST_FRACTION) -> TaskStream:
    """Domain stream; task 0 is unrotated, later tasks use seeded angles in [0, 180)."""
    if base.image_shape is None:
        raise ConfigurationError("rotated streams need a dataset with an image shape")
    if n_tasks < 1:
        raise ConfigurationError("n_tasks must be >= 1")

    rng = np.random.default_rng(seed)
    train_all, test_all = _train_test(base, test, test_fraction)
    class_ids = tuple(range(base.class_count))
    tasks = []
    for t in range(n_tasks):
        angle = 0.0 if t == 0 else float(rng.uniform(0.0, 180.0))
        tasks.append(Task(
            task_id=t,
            train=train_all.with_inputs(rotate_images(train_all.inputs, base.image_shape, angle)),
            test=test_all.with_inputs(rotate_images(test_all.inputs, base.image_shape, angle)),
            class_ids=class_ids,
            angle_deg=angle,
        ))
    logger.info(f"Built rotated domain stream: {n_tasks} tasks")
    return TaskStream(tasks=tasks, scenario=Scenario.DOMAIN_IL)


def predict_batch(logits: np.ndarray, scenario: Scenario,
                  task_class_ids: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Predicted class per logit row.

    task_il takes the argmax over task_class_ids only; class_il and
    domain_il take the global argmax. Ties go to the lowest class index.
    """
    h = np.asarray(logits, dtype=np.float64)
    if h.ndim == 1:
        h = h.reshape(1, -1)
    if Scenario(scenario) is not Scenario.TASK_IL:
        return np.argmax(h, axis=1)

    if task_class_ids is None or len(task_class_ids) == 0:
        raise InputError("task_il prediction needs a nonempty set of task classes")
    ids = np.sort(np.asarray(task_class_ids, dtype=np.int64))
    if ids.min() < 0 or ids.max() >= h.shape[1]:
        raise InputError(f"task classes {ids.tolist()} outside [0, {h.shape[1]})")
    return ids[np.argmax(h[:, ids], axis=1)]


def eval_predict(logits: Sequence[float], scenario: Scenario,
                 task_class_ids: Optional[Sequence[int]] = None) -> int:
    """Predicted class for a single logit row."""
    return int(predict_batch(np.asarray(logits).reshape(1, -1), scenario, task_class_ids)[0])


def accuracy(model: MLP, task: Task, scenario: Scenario) -> float:
    """Test-set accuracy of one task under the scenario's prediction rule."""
    if len(task.test) == 0:
        raise InputError(f"task {task.task_id} has an empty test set")
    preds = predict_batch(forward(model, task.test.inputs), scenario, task.class_ids)
    return float(np.mean(preds == task.test.labels))
