"""
Continual Learning Experiment Runner v1.0
=========================================
Seeded experiments over task streams, with CSV/YAML artifacts.

Features:
- ExperimentConfig from YAML, overridable from the command line
- One run per seed: stream -> model -> sequential training -> result matrix
- Joint baseline (one pass over the union of all tasks)
- Method comparison and buffer-size sweeps
- Backward-pass accounting per run
- Hook plugins (observers only) via plugin_system.PluginManager

Usage:
    python src/experiment_runner.py --method er,mgser_sam --scenario class_il --seeds 0,1,2
"""

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence
import argparse
import logging
import os
import sys

import numpy as np
import yaml

from cl_errors import ConfigurationError, ContinualLearningError
from cl_metrics import MetricSummary, ResultMatrix, matrix_to_csv, record_eval, summarize
from cl_scenarios import (
    Dataset,
    Scenario,
    Task,
    TaskStream,
    accuracy,
    make_permuted_stream,
    make_rotated_stream,
    make_split_stream,
)
from datasets import gen_synthetic, load_mnist_dir
from mlp_model import Activation, model_init
from plugin_system import HookPoint, PluginManager, dispatch
from replay_buffer import MemoryBuffer
from rng_streams import RngStreams, substream, substream_int
from sam_optimizer import Method, OptimConfig, TaskBatch, expected_backward_passes, take_step

logger = logging.getLogger(__name__)

DATASETS = ("synthetic", "mnist")
DOMAIN_TRANSFORMS = ("permuted", "rotated")
DEFAULT_SPLIT_TASKS = 5
DEFAULT_DOMAIN_TASKS = 20
MNIST_DOMAIN_TRAIN_PER_TASK = 1000


@dataclass
class ExperimentConfig:
    """Everything that determines a run, apart from the seed"""
    method: Method = Method.MGSER_SAM
    scenario: Scenario = Scenario.CLASS_IL
    domain_transform: str = "permuted"
    dataset: str = "synthetic"
    mnist_dir: Optional[str] = None
    class_count: int = 10
    per_class: int = 8000
    feature_dim: int = 64
    n_tasks: Optional[int] = None
    classes_per_task: Optional[int] = None
    shuffle_classes: bool = False
    test_fraction: float = 0.2
    train_per_task: Optional[int] = None
    buffer_size: int = 400
    epochs: int = 1
    batch_size: int = 32
    lr: float = 0.05
    rho: float = 0.05
    hidden_dims: list = field(default_factory=lambda: [400])
    activation: Activation = Activation.RELU
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out_dir: str = "results"
    log_level: str = "INFO"

    def __post_init__(self):
        try:
            self.method = Method(self.method)
            self.scenario = Scenario(self.scenario)
            self.activation = Activation(self.activation)
        except ValueError as e:
            raise ConfigurationError(str(e)) from e
        if self.dataset not in DATASETS:
            raise ConfigurationError(f"dataset must be one of {DATASETS}, got '{self.dataset}'")
        if self.dataset == "mnist" and not self.mnist_dir:
            raise ConfigurationError("dataset 'mnist' needs mnist_dir")
        if self.domain_transform not in DOMAIN_TRANSFORMS:
            raise ConfigurationError(
                f"domain_transform must be one of {DOMAIN_TRANSFORMS}, got '{self.domain_transform}'"
            )
        for name in ("class_count", "per_class", "feature_dim", "buffer_size", "epochs", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("n_tasks", "classes_per_task", "train_per_task"):
            value = getattr(self, name)
            if value is not None and int(value) < 1:
                raise ConfigurationError(f"{name} must be >= 1 when set, got {value}")
        if not self.lr > 0 or not self.rho >= 0:
            raise ConfigurationError(f"need lr > 0 and rho >= 0, got lr={self.lr} rho={self.rho}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigurationError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if not self.seeds:
            raise ConfigurationError("seed list must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError(f"duplicate seeds in {self.seeds}")
        self.seeds = [int(s) for s in self.seeds]
        self.hidden_dims = [int(h) for h in self.hidden_dims]
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigurationError(f"hidden_dims must all be >= 1, got {self.hidden_dims}")

    @property
    def resolved_tasks(self) -> int:
        if self.n_tasks is not None:
            return int(self.n_tasks)
        return DEFAULT_SPLIT_TASKS if self.scenario.is_split else DEFAULT_DOMAIN_TASKS

    @property
    def resolved_classes_per_task(self) -> int:
        if self.classes_per_task is not None:
            return int(self.classes_per_task)
        return max(1, self.class_count // self.resolved_tasks)

    @property
    def resolved_train_per_task(self) -> Optional[int]:
        """Per-task training cap; MNIST domain streams default to 1000 examples per task."""
        if self.train_per_task is not None:
            return int(self.train_per_task)
        if self.dataset == "mnist" and self.scenario is Scenario.DOMAIN_IL:
            return MNIST_DOMAIN_TRAIN_PER_TASK
        return None

    def optim_config(self) -> OptimConfig:
        return OptimConfig(lr=self.lr, rho=self.rho, batch_size=self.batch_size, method=self.method)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["method"] = self.method.value
        data["scenario"] = self.scenario.value
        data["activation"] = self.activation.value
        return data


def load_config(path, **overrides) -> ExperimentConfig:
    """
    Read an ExperimentConfig from YAML; keyword overrides that are not None win.

    Unknown keys are rejected.
    """
    path = Path(path)
    with open(path) as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    raw = raw.get("experiment", raw)

    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigurationError(f"{path}: unknown config keys {unknown}")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**raw)


@dataclass
class SeedResult:
    seed: int
    matrix: ResultMatrix
    summary: MetricSummary
    steps: int = 0
    backward_passes: int = 0


@dataclass
class RunReport:
    """Per-seed results and their aggregate for one (config, method, buffer size)"""
    config: ExperimentConfig
    seed_results: list = field(default_factory=list)

    def _values(self, attr: str) -> np.ndarray:
        return np.array([getattr(r.summary, attr) for r in self.seed_results
                         if getattr(r.summary, attr) is not None], dtype=np.float64)

    def _mean_std(self, attr: str) -> tuple:
        values = self._values(attr)
        if values.size == 0:
            return None, None
        std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
        return float(np.mean(values)), std

    @property
    def acc_mean(self) -> float:
        return self._mean_std("acc")[0]

    @property
    def acc_std(self) -> float:
        return self._mean_std("acc")[1]

    @property
    def forget_mean(self) -> Optional[float]:
        return self._mean_std("forget")[0]

    @property
    def forget_std(self) -> Optional[float]:
        return self._mean_std("forget")[1]

    @property
    def abs_forget_mean(self) -> Optional[float]:
        return self._mean_std("abs_forget")[0]

    @property
    def total_steps(self) -> int:
        return sum(r.steps for r in self.seed_results)

    @property
    def total_backward_passes(self) -> int:
        return sum(r.backward_passes for r in self.seed_results)

    def to_dict(self) -> dict:
        """Machine-readable summary; contains no timestamps."""
        return {
            "method": self.config.method.value,
            "scenario": self.config.scenario.value,
            "buffer_size": self.config.buffer_size,
            "seeds": [r.seed for r in self.seed_results],
            "acc_mean": self.acc_mean,
            "acc_std": self.acc_std,
            "forget_mean": self.forget_mean,
            "forget_std": self.forget_std,
            "abs_forget_mean": self.abs_forget_mean,
            "steps": self.total_steps,
            "backward_passes": self.total_backward_passes,
            "per_seed": [
                {"seed": r.seed, "acc": r.summary.acc, "forget": r.summary.forget,
                 "steps": r.steps, "backward_passes": r.backward_passes}
                for r in self.seed_results
            ],
            "config": self.config.to_dict(),
        }


def _load_base(cfg: ExperimentConfig, seed: int) -> tuple:
    if cfg.dataset == "mnist":
        return load_mnist_dir(cfg.mnist_dir)
    return gen_synthetic(cfg.class_count, cfg.per_class, cfg.feature_dim,
                         seed=substream_int(seed, "data")), None


def _cap_train(stream: TaskStream, cap: Optional[int], rng: np.random.Generator) -> TaskStream:
    if cap is None:
        return stream
    for task in stream:
        if len(task.train) > cap:
            keep = np.sort(rng.choice(len(task.train), size=cap, replace=False))
            task.train = task.train.subset(keep)
    return stream


def build_stream(cfg: ExperimentConfig, seed: int) -> TaskStream:
    """Task stream for one seed; data and transforms come from their own RNG substreams."""
    base, test = _load_base(cfg, seed)
    transform_seed = substream_int(seed, "transforms")
    n_tasks = cfg.resolved_tasks

    if cfg.scenario.is_split:
        stream = make_split_stream(base, n_tasks, cfg.resolved_classes_per_task, cfg.scenario,
                                   test=test, test_fraction=cfg.test_fraction,
                                   shuffle_classes=cfg.shuffle_classes, seed=transform_seed)
    elif cfg.domain_transform == "rotated":
        stream = make_rotated_stream(base, n_tasks, transform_seed, test=test,
                                     test_fraction=cfg.test_fraction)
    else:
        stream = make_permuted_stream(base, n_tasks, transform_seed, test=test,
                                      test_fraction=cfg.test_fraction)
    return _cap_train(stream, cfg.resolved_train_per_task, substream(seed, "subsample"))


def _iter_batches(data: Dataset, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(len(data))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield data.inputs[idx], data.labels[idx]


def _union(tasks: Sequence[Task]) -> Dataset:
    first = tasks[0].train
    return Dataset(np.vstack([t.train.inputs for t in tasks]),
                   np.concatenate([t.train.labels for t in tasks]),
                   first.class_count, first.image_shape)


def run_seed(cfg: ExperimentConfig, seed: int,
             plugins: Optional[PluginManager] = None) -> SeedResult:
    """
    One seeded repetition.

    Sequential methods train task by task and evaluate every seen task after
    each one. Joint trains once on the union of all tasks and fills only the
    last row of the result matrix.
    """
    rngs = RngStreams(seed)
    stream = build_stream(cfg, seed)
    n_tasks = len(stream)
    model = model_init([stream.feature_dim, *cfg.hidden_dims, stream.class_count],
                       seed=substream_int(seed, "init"), activation=cfg.activation)
    buffer = (MemoryBuffer(cfg.buffer_size, stream.class_count, stream.feature_dim)
              if cfg.method.uses_buffer else None)
    optim = cfg.optim_config()
    matrix = ResultMatrix(n_tasks)
    result = SeedResult(seed=seed, matrix=matrix, summary=None)
    identity = {"method": cfg.method.value, "seed": seed}

    def train_on(data: Dataset, task_id: int) -> None:
        for epoch in range(cfg.epochs):
            for inputs, labels in _iter_batches(data, cfg.batch_size, rngs["data"]):
                dispatch(plugins, HookPoint.PRE_STEP, **identity, task_id=task_id, step=result.steps)
                report = take_step(model, TaskBatch(inputs, labels, task_id), buffer, optim,
                                   rngs["buffer"])
                result.steps += 1
                result.backward_passes += report.backward_passes
                dispatch(plugins, HookPoint.POST_STEP, **identity, task_id=task_id,
                         step=result.steps, report=report,
                         expected_passes=expected_backward_passes(cfg.method))

    def evaluate(after_task: int) -> list:
        row = []
        for j in range(after_task + 1 if cfg.method is not Method.JOINT else n_tasks):
            acc = accuracy(model, stream[j], stream.scenario)
            record_eval(matrix, after_task, j, acc)
            row.append(acc)
        return row

    try:
        if cfg.method is Method.JOINT:
            last = n_tasks - 1
            dispatch(plugins, HookPoint.PRE_TASK, **identity, task_id=last)
            train_on(_union(stream.tasks), last)
            row = evaluate(last)
            dispatch(plugins, HookPoint.POST_TASK, **identity, task_id=last, accuracies=row)
        else:
            for task in stream:
                logger.info(f"[{cfg.method.value} seed={seed}] task {task.task_id + 1}/{n_tasks} "
                            f"({len(task.train)} train examples)")
                dispatch(plugins, HookPoint.PRE_TASK, **identity, task_id=task.task_id)
                train_on(task.train, task.task_id)
                row = evaluate(task.task_id)
                if buffer is not None:
                    logger.info(f"Buffer after task {task.task_id}: {buffer.task_histogram()}")
                dispatch(plugins, HookPoint.POST_TASK, **identity, task_id=task.task_id, accuracies=row)
    except ContinualLearningError as e:
        dispatch(plugins, HookPoint.ON_ERROR, **identity, error=e)
        raise

    result.summary = summarize(matrix)
    logger.info(f"[{cfg.method.value} seed={seed}] ACC={result.summary.acc:.4f} "
                f"Forget={result.summary.forget} steps={result.steps}")
    return result


def run_experiment(cfg: ExperimentConfig, plugins: Optional[PluginManager] = None) -> RunReport:
    """Run every configured seed of cfg.method."""
    report = RunReport(config=cfg)
    for seed in cfg.seeds:
        report.seed_results.append(run_seed(cfg, seed, plugins))
    dispatch(plugins, HookPoint.POST_RUN, method=cfg.method.value, report=report)
    return report


def run_comparison(cfg: ExperimentConfig, methods: Sequence,
                   plugins: Optional[PluginManager] = None) -> list:
    """One RunReport per method, all other settings shared."""
    return [run_experiment(replace(cfg, method=Method(m)), plugins) for m in methods]


def run_buffer_sweep(cfg: ExperimentConfig, buffer_sizes: Sequence[int],
                     plugins: Optional[PluginManager] = None) -> list:
    """One RunReport per memory size for cfg.method."""
    return [run_experiment(replace(cfg, buffer_size=int(m)), plugins) for m in buffer_sizes]


def _atomic_write(path: Path, text: str) -> Path:
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e
    return path


def _mean_or_none(values: list) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if len(present) == len(values) and present else None


def _cell(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


def curve_csv(report: RunReport) -> str:
    """Seed-averaged curves, one row per task."""
    n_tasks = report.seed_results[0].matrix.n_tasks
    lines = ["task,avg_acc,first_task_acc\n"]
    for i in range(n_tasks):
        avg = _mean_or_none([r.summary.per_task_curve[i] for r in report.seed_results])
        first = _mean_or_none([r.summary.first_task_curve[i] for r in report.seed_results])
        lines.append(f"{i},{_cell(avg)},{_cell(first)}\n")
    return "".join(lines)


def emit_report(report: RunReport, out_dir) -> list:
    """
    Write matrix_seed<seed>.csv per seed, summary.yaml and curve.csv.

    Returns:
        Paths written
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [
        _atomic_write(out / f"matrix_seed{r.seed}.csv", matrix_to_csv(r.matrix))
        for r in report.seed_results
    ]
    written.append(_atomic_write(out / "summary.yaml",
                                 yaml.safe_dump(report.to_dict(), sort_keys=False)))
    written.append(_atomic_write(out / "curve.csv", curve_csv(report)))
    logger.info(f"Wrote {len(written)} files to {out}")
    return written


def emit_comparison(reports: Sequence[RunReport], out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["method,scenario,buffer_size,acc_mean,acc_std,forget_mean,forget_std,"
             "abs_forget_mean,steps,backward_passes\n"]
    for r in reports:
        lines.append(
            f"{r.config.method.value},{r.config.scenario.value},{r.config.buffer_size},"
            f"{_cell(r.acc_mean)},{_cell(r.acc_std)},{_cell(r.forget_mean)},"
            f"{_cell(r.forget_std)},{_cell(r.abs_forget_mean)},"
            f"{r.total_steps},{r.total_backward_passes}\n"
        )
    return _atomic_write(out / "comparison.csv", "".join(lines))


def format_comparison_table(reports: Sequence[RunReport]) -> str:
    """Fixed-width table of ACC and Forget (percent, mean ± std)."""
    def pct(mean, std):
        return "n/a" if mean is None else f"{mean * 100:6.2f} ± {std * 100:5.2f}"

    header = f"{'method':<10} {'M':>6} {'ACC':>16} {'Forget':>16} {'bwd/step':>9}"
    lines = [header, "-" * len(header)]
    for r in reports:
        per_step = r.total_backward_passes / r.total_steps if r.total_steps else 0.0
        lines.append(
            f"{r.config.method.value:<10} {r.config.buffer_size:>6} "
            f"{pct(r.acc_mean, r.acc_std):>16} {pct(r.forget_mean, r.forget_std):>16} "
            f"{per_step:>9.2f}"
        )
    return "\n".join(lines)


def _int_list(text: str) -> list:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _method_list(text: str) -> list:
    if text == "all":
        return [m.value for m in Method]
    names = [part.strip() for part in text.split(",") if part.strip()]
    valid = {m.value for m in Method}
    bad = [n for n in names if n not in valid]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown method(s) {bad}; choose from {sorted(valid)} or 'all'")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Run continual-learning experiments (ER, DER++, SAM variants, baselines).")
    parser.add_argument("--config", help="YAML experiment config (flags override it)")
    parser.add_argument("--method", type=_method_list,
                        help="method or comma list, or 'all' (default: mgser_sam)")
    parser.add_argument("--scenario", choices=[s.value for s in Scenario],
                        help="default: class_il")
    parser.add_argument("--domain-transform", choices=DOMAIN_TRANSFORMS,
                        help="domain_il input shift (default: permuted)")
    parser.add_argument("--dataset", choices=DATASETS, help="default: synthetic")
    parser.add_argument("--mnist-dir", help="directory holding the four MNIST IDX files")
    parser.add_argument("--tasks", type=int, help="number of tasks (default: 5 split, 20 domain)")
    parser.add_argument("--buffer", type=_int_list,
                        help="buffer size M, or comma list for a sweep (default: 400)")
    parser.add_argument("--epochs", type=int, help="epochs per task (default: 1)")
    parser.add_argument("--batch", type=int, help="batch size (default: 32)")
    parser.add_argument("--lr", type=float, help="learning rate (default: 0.05)")
    parser.add_argument("--rho", type=float, help="SAM radius (default: 0.05)")
    parser.add_argument("--seeds", type=_int_list, help="comma-separated seeds (default: 0,1,2,3,4)")
    parser.add_argument("--train-per-task", type=int, help="cap on training examples per task")
    parser.add_argument("--out", help="output directory (default: results)")
    parser.add_argument("--plugins-dir", help="load hook plugins from this directory")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="default: INFO")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {
        "scenario": args.scenario,
        "domain_transform": args.domain_transform,
        "dataset": args.dataset,
        "mnist_dir": args.mnist_dir,
        "n_tasks": args.tasks,
        "epochs": args.epochs,
        "batch_size": args.batch,
        "lr": args.lr,
        "rho": args.rho,
        "seeds": args.seeds,
        "train_per_task": args.train_per_task,
        "out_dir": args.out,
        "log_level": args.log_level,
    }
    if args.method and len(args.method) == 1:
        overrides["method"] = args.method[0]
    if args.buffer and len(args.buffer) == 1:
        overrides["buffer_size"] = args.buffer[0]
    if args.config:
        return load_config(args.config, **overrides)
    return ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})


def _load_plugins(plugins_dir: Optional[str]) -> Optional[PluginManager]:
    if not plugins_dir:
        return None
    manager = PluginManager()
    manager.load_plugins(plugins_dir)
    config_file = Path(plugins_dir) / "plugin_config.yaml"
    if config_file.exists():
        manager.load_config(config_file)
    return manager


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level or "INFO"),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        logging.getLogger().setLevel(cfg.log_level)
        plugins = _load_plugins(args.plugins_dir)
        out = Path(cfg.out_dir)

        methods = args.method if args.method and len(args.method) > 1 else [cfg.method.value]
        sizes = args.buffer if args.buffer and len(args.buffer) > 1 else [cfg.buffer_size]

        reports = []
        for method in methods:
            for size in sizes:
                run_cfg = replace(cfg, method=Method(method), buffer_size=size)
                report = run_experiment(run_cfg, plugins)
                subdir = out if len(methods) == 1 and len(sizes) == 1 else out / f"{method}_M{size}"
                emit_report(report, subdir)
                reports.append(report)
        if len(reports) > 1:
            emit_comparison(reports, out)
        print(format_comparison_table(reports))
        return 0
    except (ContinualLearningError, OSError) as e:
        logger.error(str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
