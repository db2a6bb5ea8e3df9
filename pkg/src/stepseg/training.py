"""SGD training on one labeled scene, evaluation, and the alpha sweep.

One "stochastic" iteration is a full-scene gradient step on an augmented
copy of the single training example (a seeded flip/rotation per step);
the only other noise source is the seeded parameter init. The learning
rate follows step decay: lr0 * decay_factor ** (iteration // decay_every).

The sweep trains one run per (alpha, seed) pair and picks alpha* as the
argmax over alphas of the seed-median validation mIoU, breaking ties
toward the smaller alpha. Diverged runs are recorded but excluded.
"""

from __future__ import annotations

import io
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .adjoint import GradientBundle, gradient
from .losses import ClassMap, IoUReport, iou, softmax_xent_matrix
from .network import (
    NetworkParams,
    SelectionSet,
    forward,
    predict_classes,
    select_matrix,
)
from .regularizer import RegularizerSpec
from .synth import (
    augment,
    read_class_map,
    read_selection,
    selection_to_class_map,
    write_class_map,
    write_selection,
)
from .tensor_ops import read_ftf, write_ftf

_STREAM_INIT = 5
_KERNEL_SIZE = 3


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run, given the data files."""

    iterations: int = 250
    lr0: float = 0.01
    decay_factor: float = 0.5
    decay_every: int = 100
    seed: int = 0
    augmentation: bool = True
    regularizer: RegularizerSpec = field(
        default_factory=lambda: RegularizerSpec("quadratic", 0.0))
    width: int = 32
    steps: int = 10
    activation: str = "tanh"
    h: float = 1.0
    eval_every: int = 25

    def __post_init__(self):
        if self.iterations < 0 or self.width < 1 or self.steps < 0:
            raise ValueError("iterations, width, steps must be sensible")
        if self.lr0 < 0 or self.decay_every < 1 or self.eval_every < 1:
            raise ValueError("lr0 >= 0, decay_every >= 1, eval_every >= 1")

    def lr(self, iteration: int) -> float:
        return self.lr0 * self.decay_factor ** (iteration // self.decay_every)


_CONFIG_KEYS = ("iterations", "lr0", "decay_factor", "decay_every", "seed",
                "augmentation", "reg_kind", "alpha", "width", "steps",
                "activation", "h", "eval_every")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config(text: str, base: Optional[TrainConfig] = None) -> TrainConfig:
    """Key=value overrides on top of base (or defaults); unknown keys rejected."""
    config = base if base is not None else TrainConfig()
    reg_kind = config.regularizer.kind
    alpha = config.regularizer.alpha
    updates = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not sep or key not in _CONFIG_KEYS:
            raise ValueError(f"unknown config line {raw!r}")
        if key == "reg_kind":
            reg_kind = value
        elif key == "alpha":
            alpha = float(value)
        elif key in ("iterations", "decay_every", "seed", "width", "steps",
                     "eval_every"):
            updates[key] = int(value)
        elif key in ("lr0", "decay_factor", "h"):
            updates[key] = float(value)
        elif key == "augmentation":
            updates[key] = _parse_bool(value)
        else:
            updates[key] = value
    updates["regularizer"] = RegularizerSpec(reg_kind, alpha)
    return replace(config, **updates)


def config_text(config: TrainConfig) -> str:
    pairs = [("iterations", config.iterations), ("lr0", repr(config.lr0)),
             ("decay_factor", repr(config.decay_factor)),
             ("decay_every", config.decay_every), ("seed", config.seed),
             ("augmentation", str(config.augmentation).lower()),
             ("reg_kind", config.regularizer.kind),
             ("alpha", repr(config.regularizer.alpha)),
             ("width", config.width), ("steps", config.steps),
             ("activation", config.activation), ("h", repr(config.h)),
             ("eval_every", config.eval_every)]
    return "".join(f"{k}={v}\n" for k, v in pairs)


def init_params(bands: int, num_classes: int, width: int, steps: int,
                activation: str, h: float, seed: int,
                scale: float = 1.0) -> NetworkParams:
    """Seeded Gaussian kernels scaled by scale / sqrt(in_channels * kh * kw)."""
    rng = np.random.default_rng([seed, _STREAM_INIT])

    def draw(out_c: int, in_c: int, kh: int, kw: int) -> np.ndarray:
        std = scale / math.sqrt(in_c * kh * kw)
        return std * rng.standard_normal((out_c, in_c, kh, kw))

    return NetworkParams(
        lift=draw(width, bands, 1, 1),
        layers=tuple(draw(width, width, _KERNEL_SIZE, _KERNEL_SIZE)
                     for _ in range(steps)),
        project=draw(num_classes, width, 1, 1),
        h=h, activation=activation)


@dataclass(frozen=True)
class IterationLog:
    iteration: int
    lr: float
    loss: float
    reg_value: float
    objective: float
    val_loss: Optional[float] = None
    val_miou: Optional[float] = None


@dataclass(frozen=True)
class TrainResult:
    """Final params and per-iteration log; unpacks as (params, history)."""

    params: NetworkParams
    history: tuple[IterationLog, ...]
    status: str

    def __iter__(self):
        yield self.params
        yield self.history


def _sgd_update(params: NetworkParams, grads: GradientBundle,
                lr: float) -> NetworkParams:
    return NetworkParams(
        lift=params.lift - lr * grads.lift,
        layers=tuple(k - lr * g for k, g in zip(params.layers, grads.layers)),
        project=params.project - lr * grads.project,
        h=params.h, activation=params.activation)


def _infer_num_classes(train_labels: SelectionSet,
                       val_labels: SelectionSet) -> int:
    ids = [int(s.classes.max()) for s in (train_labels, val_labels) if len(s)]
    if not ids:
        raise ValueError("cannot infer classes from empty label sets")
    return max(2, max(ids) + 1)


def _val_metrics(params: NetworkParams, data: np.ndarray,
                 val_labels: SelectionSet) -> tuple[float, float]:
    trace = forward(params, data)
    val_loss, _ = softmax_xent_matrix(select_matrix(trace.output, val_labels),
                                      val_labels.classes)
    sparse_truth = selection_to_class_map(val_labels, data.shape[1],
                                          data.shape[2])
    report = iou(predict_classes(trace.output), sparse_truth,
                 num_classes=params.num_classes)
    return val_loss, report.miou


def train(config: TrainConfig, data: np.ndarray, train_labels: SelectionSet,
          val_labels: SelectionSet) -> TrainResult:
    """SGD on the training objective; aborts with the last finite params
    if the loss leaves the finite range."""
    if len(train_labels) == 0:
        raise ValueError("training needs at least one labeled pixel")
    num_classes = _infer_num_classes(train_labels, val_labels)
    params = init_params(bands=data.shape[0], num_classes=num_classes,
                         width=config.width, steps=config.steps,
                         activation=config.activation, h=config.h,
                         seed=config.seed)
    spec = config.regularizer
    history: list[IterationLog] = []
    last_good = params
    status = "ok"
    for it in range(config.iterations):
        lr = config.lr(it)
        if config.augmentation:
            step_data, step_labels = augment(data, train_labels,
                                             config.seed, it)
        else:
            step_data, step_labels = data, train_labels
        try:
            # overflow is detected by explicit finite checks, so numpy's
            # transient warnings would only be noise
            with np.errstate(over="ignore", invalid="ignore"):
                grads = gradient(params, step_data, step_labels,
                                 spec.alpha, spec.kind)
        except FloatingPointError:
            status = "diverged"
            params = last_good
            break
        if not math.isfinite(grads.objective):
            status = "diverged"
            params = last_good
            break
        last_good = params
        params = _sgd_update(params, grads, lr)
        val_loss = val_miou = None
        is_eval = (it + 1) % config.eval_every == 0 or it == config.iterations - 1
        if is_eval and len(val_labels):
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    val_loss, val_miou = _val_metrics(params, data, val_labels)
            except FloatingPointError:
                status = "diverged"
                params = last_good
                break
        history.append(IterationLog(
            iteration=it, lr=lr, loss=grads.loss, reg_value=grads.regularizer,
            objective=grads.objective, val_loss=val_loss, val_miou=val_miou))
    return TrainResult(params=params, history=tuple(history), status=status)


def evaluate(params: NetworkParams, data: np.ndarray, truth: ClassMap,
             out_path=None) -> tuple[IoUReport, ClassMap]:
    """Dense-truth IoU of the argmax prediction; optional LBL1 map dump."""
    trace = forward(params, data)
    pred = ClassMap(values=predict_classes(trace.output))
    report = iou(pred, truth, num_classes=params.num_classes)
    if out_path is not None:
        write_class_map(out_path, pred)
    return report, pred


@dataclass(frozen=True)
class Dataset:
    """One synthetic scene with its sparse train/val label sets."""

    data: np.ndarray
    truth: ClassMap
    train: SelectionSet
    val: SelectionSet


def save_dataset(directory, dataset: Dataset):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_ftf(directory / "data.ftf", dataset.data)
    write_class_map(directory / "truth.lbl", dataset.truth)
    height, width = dataset.truth.values.shape
    write_selection(directory / "train_labels.lbl", dataset.train, height, width)
    write_selection(directory / "val_labels.lbl", dataset.val, height, width)


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    data = read_ftf(directory / "data.ftf")
    truth = read_class_map(directory / "truth.lbl")
    train_sel, _ = read_selection(directory / "train_labels.lbl")
    val_sel, _ = read_selection(directory / "val_labels.lbl")
    return Dataset(data=data, truth=truth, train=train_sel, val=val_sel)


@dataclass(frozen=True)
class SweepRecord:
    alpha: float
    seed: int
    train_loss: float
    val_miou: float
    test_miou: float
    wall_time: float
    status: str


@dataclass(frozen=True)
class SweepResult:
    records: tuple[SweepRecord, ...]
    alpha_star: Optional[float]

    def summary(self) -> str:
        if self.alpha_star is None:
            return "no run finished; alpha* undefined\n"
        by_alpha = _median_val_miou(self.records)
        lines = [f"alpha*={repr(self.alpha_star)} by median validation mIoU"]
        for alpha in sorted(by_alpha):
            lines.append(f"  alpha={repr(alpha)} median_val_miou="
                         f"{repr(by_alpha[alpha])}")
        return "\n".join(lines) + "\n"


def _run_one(config: TrainConfig, dataset: Dataset, alpha: float,
             seed: int) -> SweepRecord:
    run_config = replace(config, seed=seed,
                         regularizer=RegularizerSpec("quadratic", alpha))
    started = time.perf_counter()
    result = train(run_config, dataset.data, dataset.train, dataset.val)
    wall = time.perf_counter() - started
    nan = float("nan")
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            trace = forward(result.params, dataset.data)
            train_loss, _ = softmax_xent_matrix(
                select_matrix(trace.output, dataset.train),
                dataset.train.classes)
            _, val_miou = _val_metrics(result.params, dataset.data,
                                       dataset.val)
            report = iou(predict_classes(trace.output), dataset.truth,
                         num_classes=result.params.num_classes)
            test_miou = report.miou
    except FloatingPointError:
        train_loss = val_miou = test_miou = nan
        result = replace(result, status="diverged")
    return SweepRecord(alpha=alpha, seed=seed, train_loss=train_loss,
                       val_miou=val_miou, test_miou=test_miou,
                       wall_time=wall, status=result.status)


def _median_val_miou(records: tuple[SweepRecord, ...]) -> dict[float, float]:
    by_alpha: dict[float, list[float]] = {}
    for rec in records:
        if rec.status == "ok":
            by_alpha.setdefault(rec.alpha, []).append(rec.val_miou)
    return {alpha: statistics.median(v) for alpha, v in by_alpha.items()}


def sweep(config: TrainConfig, alphas: list[float], seeds: list[int],
          dataset: Dataset, jobs: int = 1) -> SweepResult:
    """Independent training runs over the (alpha, seed) grid."""
    if not alphas or not seeds:
        raise ValueError("need at least one alpha and one seed")
    grid = [(alpha, seed) for alpha in sorted(alphas) for seed in sorted(seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(
                _run_one, [config] * len(grid), [dataset] * len(grid),
                [a for a, _ in grid], [s for _, s in grid]))
    else:
        records = [_run_one(config, dataset, a, s) for a, s in grid]
    records.sort(key=lambda r: (r.alpha, r.seed))
    medians = _median_val_miou(tuple(records))
    alpha_star = None
    if medians:
        best = max(medians.values())
        alpha_star = min(a for a, m in medians.items() if m == best)
    return SweepResult(records=tuple(records), alpha_star=alpha_star)


def sweep_csv(records: tuple[SweepRecord, ...]) -> str:
    """The sweep table with repr-exact floats, sorted by (alpha, seed)."""
    buf = io.StringIO()
    buf.write("alpha,seed,train_loss,val_miou,test_miou,status\n")
    for rec in sorted(records, key=lambda r: (r.alpha, r.seed)):
        buf.write(f"{repr(rec.alpha)},{rec.seed},{repr(rec.train_loss)},"
                  f"{repr(rec.val_miou)},{repr(rec.test_miou)},{rec.status}\n")
    return buf.getvalue()
