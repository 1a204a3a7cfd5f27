"""
Continual Learning Metrics v1.0
===============================
Result matrix bookkeeping and the two headline metrics.

R[i][j] is the test accuracy on task j measured right after training task i.

- ACC    = mean_j R[T-1][j]
- Forget = mean over j < T-1 of (R[T-1][j] - F_j), F_j = max_{r >= j} R[r][j]

Forget is reported with the sign of that formula (<= 0 when the learner
forgets) and also as its magnitude |Forget|, the "lower is better" number.
"""

from dataclasses import dataclass, field
from typing import Optional
import logging

import numpy as np

from cl_errors import ConfigurationError, UsageError

logger = logging.getLogger(__name__)

# forgetting() result when fewer than two tasks exist
NOT_APPLICABLE = None


@dataclass
class ResultMatrix:
    """T x T accuracy matrix with a fill mask; each cell is written once"""
    n_tasks: int
    values: np.ndarray = field(default=None, repr=False)
    filled: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if int(self.n_tasks) < 1:
            raise ConfigurationError(f"n_tasks must be >= 1, got {self.n_tasks}")
        self.n_tasks = int(self.n_tasks)
        shape = (self.n_tasks, self.n_tasks)
        if self.values is None:
            self.values = np.full(shape, np.nan)
        if self.filled is None:
            self.filled = np.zeros(shape, dtype=bool)

    def _check_cell(self, after_task: int, on_task: int) -> None:
        if not (0 <= after_task < self.n_tasks and 0 <= on_task < self.n_tasks):
            raise UsageError(
                f"cell ({after_task}, {on_task}) outside a {self.n_tasks}x{self.n_tasks} matrix"
            )

    def record(self, after_task: int, on_task: int, accuracy: float) -> None:
        self._check_cell(after_task, on_task)
        if not 0.0 <= accuracy <= 1.0:
            raise UsageError(f"accuracy {accuracy} outside [0, 1]")
        if self.filled[after_task, on_task]:
            raise UsageError(f"cell ({after_task}, {on_task}) already recorded")
        self.values[after_task, on_task] = float(accuracy)
        self.filled[after_task, on_task] = True

    def get(self, after_task: int, on_task: int) -> Optional[float]:
        self._check_cell(after_task, on_task)
        if not self.filled[after_task, on_task]:
            return None
        return float(self.values[after_task, on_task])

    def row_complete(self, after_task: int) -> bool:
        return bool(self.filled[after_task].all())


@dataclass
class MetricSummary:
    """Headline metrics plus per-task curves"""
    acc: float
    forget: Optional[float]
    abs_forget: Optional[float]
    per_task_curve: list = field(default_factory=list)
    first_task_curve: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "forget": self.forget,
            "abs_forget": self.abs_forget,
            "per_task_curve": list(self.per_task_curve),
            "first_task_curve": list(self.first_task_curve),
        }


def record_eval(matrix: ResultMatrix, after_task: int, on_task: int, accuracy: float) -> None:
    matrix.record(after_task, on_task, accuracy)


def acc_final(matrix: ResultMatrix) -> float:
    """Mean of the last row."""
    last = matrix.n_tasks - 1
    if not matrix.row_complete(last):
        missing = np.flatnonzero(~matrix.filled[last]).tolist()
        raise UsageError(f"final row incomplete, missing tasks {missing}")
    return float(np.mean(matrix.values[last]))


def forgetting(matrix: ResultMatrix) -> Optional[float]:
    """
    Signed forgetting of the final model.

    Returns:
        mean of (R[T-1][j] - F_j) over j < T-1, or NOT_APPLICABLE when T == 1
    """
    n = matrix.n_tasks
    if n < 2:
        return NOT_APPLICABLE
    last = n - 1
    gaps = []
    for j in range(last):
        if not matrix.filled[last, j]:
            raise UsageError(f"final row missing task {j}")
        column = matrix.values[j:, j][matrix.filled[j:, j]]
        gaps.append(matrix.values[last, j] - column.max())
    return float(np.sum(gaps) / last)


def per_task_curve(matrix: ResultMatrix) -> list:
    """Mean accuracy over tasks 0..i after training task i (None if nothing recorded)."""
    curve = []
    for i in range(matrix.n_tasks):
        seen = matrix.filled[i, :i + 1]
        curve.append(float(np.mean(matrix.values[i, :i + 1][seen])) if seen.any() else None)
    return curve


def first_task_curve(matrix: ResultMatrix) -> list:
    """Accuracy on task 0 after each task."""
    return [matrix.get(i, 0) for i in range(matrix.n_tasks)]


def summarize(matrix: ResultMatrix) -> MetricSummary:
    forget = forgetting(matrix)
    return MetricSummary(
        acc=acc_final(matrix),
        forget=forget,
        abs_forget=None if forget is None else abs(forget),
        per_task_curve=per_task_curve(matrix),
        first_task_curve=first_task_curve(matrix),
    )


def matrix_to_csv(matrix: ResultMatrix) -> str:
    """T rows of T comma-separated values, 6 decimals, unfilled cells empty."""
    lines = []
    for i in range(matrix.n_tasks):
        cells = [
            f"{matrix.values[i, j]:.6f}" if matrix.filled[i, j] else ""
            for j in range(matrix.n_tasks)
        ]
        lines.append(",".join(cells) + "\n")
    return "".join(lines)


def matrix_from_csv(text: str) -> ResultMatrix:
    """Inverse of matrix_to_csv; every line is a row, including an all-empty one."""
    rows = [line.split(",") for line in text.splitlines()]
    matrix = ResultMatrix(len(rows))
    for i, cells in enumerate(rows):
        if len(cells) != matrix.n_tasks:
            raise UsageError(f"row {i} has {len(cells)} cells, expected {matrix.n_tasks}")
        for j, cell in enumerate(cells):
            if cell.strip():
                matrix.record(i, j, float(cell))
    return matrix


def _fmt(value: Optional[float], scale: float = 100.0) -> str:
    return "n/a" if value is None else f"{value * scale:.2f}"


def get_metrics_report(summary: MetricSummary) -> str:
    """Human-readable summary of one run."""
    report = [
        f"ACC    : {_fmt(summary.acc)}%",
        f"Forget : {_fmt(summary.forget)} (|Forget| {_fmt(summary.abs_forget)})",
        "Avg accuracy after each task:",
    ]
    for i, value in enumerate(summary.per_task_curve):
        first = summary.first_task_curve[i] if i < len(summary.first_task_curve) else None
        report.append(f"  task {i}: avg {_fmt(value)}  first-task {_fmt(first)}")
    return "\n".join(report)
