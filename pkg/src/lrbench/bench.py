"""Benchmark pipelines: conventional two-rate baseline vs. the optimized
range-test / freeze-precompute / differential-rate pipeline, plus reporting.

The conventional run trains the whole model at a fixed rate until early
stopping, then resumes at a lower fixed rate. The optimized run finds a peak
rate with the range test, shapes the classifier head on cached features
under a restarting cosine schedule, then unfreezes everything and fine-tunes
with per-group rates whose cycles double in length.

Wall time is measured with a monotonic clock around the training loops only;
dataset loading is excluded. One benchmark per process; the two pipelines
run sequentially so they compete for the same hardware fairly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import (CIFAR10_MEAN, CIFAR10_STD, Dataset, load_cifar10,
                   make_blobs, normalize, split)
from .errors import ConfigError
from .finder import RangeTestConfig, range_test, suggest_lr
from .groups import (LayerGroupRates, default_partition, freeze_groups,
                     group_lr_at, head_model, partition_layers,
                     precompute_features)
from .nn import Model, build_cnn, build_mlp, forward
from .schedule import CosineCycleConfig, lr_at
from .train import (EarlyStopState, EpochRecord, TrainConfig,
                    batches_per_epoch, evaluate, train_phase)

__all__ = [
    "BenchConfig",
    "PhaseResult",
    "RunReport",
    "load_bench_dataset",
    "build_model",
    "run_conventional",
    "run_optimized",
    "speedup",
    "confusion",
    "predictions",
    "emit_report",
    "parse_history_csv",
]


@dataclass(frozen=True)
class BenchConfig:
    dataset: str = "blobs"
    model: str = "mlp"
    train: TrainConfig = field(default_factory=TrainConfig)
    sched: CosineCycleConfig = field(
        default_factory=lambda: CosineCycleConfig(eta_max=0.01, t0=100))
    rates: LayerGroupRates = field(default_factory=LayerGroupRates)
    finder: RangeTestConfig = field(default_factory=RangeTestConfig)
    target_accuracy: float = 0.9
    lr1: float = 0.01
    lr2: float = 0.001
    head_epochs: int = 10
    finder_batch: int | None = None
    patience: int = 5
    min_delta: float = 1e-4
    blobs_per_class: int = 200
    blobs_noise: float = 0.08
    n_per_class: int = 200
    split_num: int = 5
    split_den: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.target_accuracy < 1.0:
            raise ConfigError(
                f"target_accuracy must be in (0, 1), got {self.target_accuracy}")
        if not self.lr1 > self.lr2 > 0.0:
            raise ConfigError(f"need lr1 > lr2 > 0, got lr1={self.lr1} lr2={self.lr2}")
        if self.model not in ("mlp", "cnn"):
            raise ConfigError(f"model must be 'mlp' or 'cnn', got {self.model!r}")
        if self.head_epochs < 1:
            raise ConfigError(f"head_epochs must be >= 1, got {self.head_epochs}")
        if self.patience < 0 or self.min_delta < 0:
            raise ConfigError("patience and min_delta must be >= 0")
        if self.finder_batch is not None and self.finder_batch < 1:
            raise ConfigError(f"finder_batch must be >= 1, got {self.finder_batch}")
        if self.split_num < 1 or self.split_den < 1:
            raise ConfigError("split ratio parts must be >= 1")


@dataclass(frozen=True)
class PhaseResult:
    name: str
    epochs_run: int
    final_valid_acc: float
    wall_seconds: float


@dataclass
class RunReport:
    phases: list[PhaseResult]
    total_seconds: float
    confusion: np.ndarray
    reached: bool
    history: list[EpochRecord]
    class_names: list[str]
    eta_max: float | None = None

    @property
    def accuracy(self) -> float:
        """Validation accuracy recomputed from the confusion matrix."""
        return float(np.trace(self.confusion)) / float(self.confusion.sum())


def load_bench_dataset(cfg: BenchConfig) -> tuple[Dataset, Dataset]:
    """Resolve the dataset spec ("blobs" or "cifar10:PATH") into normalized,
    stratified train/valid splits."""
    if cfg.dataset == "blobs":
        ds = make_blobs(n_per_class=cfg.blobs_per_class, noise=cfg.blobs_noise,
                        seed=cfg.train.seed)
    elif cfg.dataset.startswith("cifar10:"):
        path = cfg.dataset.split(":", 1)[1]
        if not path:
            raise ConfigError("cifar10 dataset spec needs a path: cifar10:PATH")
        ds = load_cifar10(path, cfg.n_per_class)
        ds = Dataset(images=normalize(ds.images, CIFAR10_MEAN, CIFAR10_STD),
                     labels=ds.labels, class_names=ds.class_names)
    else:
        raise ConfigError(
            f"unknown dataset spec {cfg.dataset!r}; expected 'blobs' or 'cifar10:PATH'")
    return split(ds, cfg.split_num, cfg.split_den, seed=cfg.train.seed)


def build_model(cfg: BenchConfig, input_shape: tuple, n_classes: int) -> Model:
    builder = build_mlp if cfg.model == "mlp" else build_cnn
    return builder(input_shape, n_classes, dtype=cfg.train.dtype,
                   seed=cfg.train.seed)


def predictions(model: Model, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    preds = []
    for start in range(0, len(x), batch_size):
        logits, _ = forward(model, x[start:start + batch_size])
        preds.append(np.argmax(logits, axis=1))
    return np.concatenate(preds)


def run_conventional(cfg: BenchConfig,
                     data: tuple[Dataset, Dataset] | None = None) -> RunReport:
    """Fixed-rate baseline: lr1 until early stopping, then lr2 until early
    stopping or the accuracy target. The target is only checked in the second
    phase; if the first already met it, the second runs zero epochs. No L2
    penalty here, that belongs to the optimized scheme."""
    train_ds, valid_ds = data if data is not None else load_bench_dataset(cfg)
    model = build_model(cfg, train_ds.images.shape[1:], train_ds.n_classes)
    history: list[EpochRecord] = []
    phases: list[PhaseResult] = []

    start = time.perf_counter()
    acc1, ep1, _ = train_phase(
        model, train_ds.images, train_ds.labels, valid_ds.images, valid_ds.labels,
        phase_name="fixed_lr1", phase_index=1, lr_fn=lambda t: cfg.lr1,
        cfg=cfg.train, max_epochs=cfg.train.max_epochs,
        stopper=EarlyStopState(cfg.patience, cfg.min_delta),
        weight_decay=0.0, history=history)
    phases.append(PhaseResult("fixed_lr1", ep1, acc1, time.perf_counter() - start))

    start = time.perf_counter()
    reached = acc1 >= cfg.target_accuracy
    if reached:
        acc2, ep2 = acc1, 0
    else:
        model.zero_velocity()
        acc2, ep2, reached = train_phase(
            model, train_ds.images, train_ds.labels, valid_ds.images,
            valid_ds.labels, phase_name="fixed_lr2", phase_index=2,
            lr_fn=lambda t: cfg.lr2, cfg=cfg.train,
            max_epochs=cfg.train.max_epochs,
            stopper=EarlyStopState(cfg.patience, cfg.min_delta),
            target_accuracy=cfg.target_accuracy, weight_decay=0.0,
            history=history, epoch_offset=ep1)
    phases.append(PhaseResult("fixed_lr2", ep2, acc2, time.perf_counter() - start))

    conf = confusion(predictions(model, valid_ds.images), valid_ds.labels,
                     valid_ds.n_classes)
    return RunReport(phases=phases,
                     total_seconds=sum(p.wall_seconds for p in phases),
                     confusion=conf, reached=reached, history=history,
                     class_names=list(valid_ds.class_names))


def run_optimized(cfg: BenchConfig,
                  data: tuple[Dataset, Dataset] | None = None) -> RunReport:
    """Three-phase pipeline: (1) range test picks the peak rate; (2) freeze
    initial+mid groups, cache head inputs, train the head on the cache under
    a restarting cosine schedule for up to head_epochs; (3) unfreeze all and
    fine-tune with per-group rates under doubling cycles until early stopping
    or the accuracy target. Validation accuracy is checked after every epoch
    in phases 2 and 3; reaching the target ends the pipeline, so a head that
    already meets it makes phase 3 a zero-epoch entry.

    Raises NoDescentFound if the range test yields no usable suggestion.
    """
    train_ds, valid_ds = data if data is not None else load_bench_dataset(cfg)
    model = build_model(cfg, train_ds.images.shape[1:], train_ds.n_classes)
    b1, b2 = default_partition(model)
    partition_layers(model, b1, b2)
    history: list[EpochRecord] = []
    phases: list[PhaseResult] = []

    start = time.perf_counter()
    probe_batch = cfg.finder_batch or cfg.train.batch_size
    trace = range_test(model, (train_ds.images, train_ds.labels), cfg.finder,
                       rng_seed=cfg.train.seed, batch_size=probe_batch)
    eta_max = suggest_lr(trace)
    _, acc0 = evaluate(model, valid_ds.images, valid_ds.labels)
    phases.append(PhaseResult("range_test", 0, acc0, time.perf_counter() - start))

    start = time.perf_counter()
    freeze_groups(model, {"initial", "mid"})
    train_cache = precompute_features(model, train_ds)
    valid_cache = precompute_features(model, valid_ds)
    head = head_model(model)
    sched2 = CosineCycleConfig(
        eta_max=eta_max, t0=batches_per_epoch(len(train_ds), cfg.train.batch_size),
        eta_min=cfg.sched.eta_min, mult=1)
    model.zero_velocity()
    acc2, ep2, _ = train_phase(
        head, train_cache.features, train_cache.labels,
        valid_cache.features, valid_cache.labels,
        phase_name="head_sgdr", phase_index=2,
        lr_fn=lambda t: lr_at(t, sched2),
        cfg=replace(cfg.train, augment=False), max_epochs=cfg.head_epochs,
        stopper=EarlyStopState(cfg.patience, cfg.min_delta),
        target_accuracy=cfg.target_accuracy, history=history)
    phases.append(PhaseResult("head_sgdr", ep2, acc2, time.perf_counter() - start))

    start = time.perf_counter()
    freeze_groups(model, set())
    model.zero_velocity()
    reached = acc2 >= cfg.target_accuracy
    if reached:
        acc3, ep3 = acc2, 0
    else:
        acc3, ep3, reached = train_phase(
            model, train_ds.images, train_ds.labels, valid_ds.images,
            valid_ds.labels, phase_name="dlr_clm", phase_index=3,
            lr_fn=lambda t: group_lr_at(t, cfg.rates, cfg.sched),
            cfg=cfg.train, max_epochs=cfg.train.max_epochs,
            stopper=EarlyStopState(cfg.patience, cfg.min_delta),
            target_accuracy=cfg.target_accuracy, history=history,
            epoch_offset=ep2)
    phases.append(PhaseResult("dlr_clm", ep3, acc3, time.perf_counter() - start))

    conf = confusion(predictions(model, valid_ds.images), valid_ds.labels,
                     valid_ds.n_classes)
    return RunReport(phases=phases,
                     total_seconds=sum(p.wall_seconds for p in phases),
                     confusion=conf, reached=reached, history=history,
                     class_names=list(valid_ds.class_names), eta_max=eta_max)


def speedup(conventional, optimized) -> float:
    """Conventional total wall seconds over optimized total wall seconds.
    Accepts RunReports or plain totals."""
    conv = float(getattr(conventional, "total_seconds", conventional))
    opt = float(getattr(optimized, "total_seconds", optimized))
    if not (conv > 0 and opt > 0):
        raise ValueError(f"totals must be > 0, got {conv} and {opt}")
    return conv / opt


def confusion(preds, labels, n_classes: int) -> np.ndarray:
    """counts[i, j] = number of samples with true class i predicted as j."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(
            f"preds and labels differ in shape: {preds.shape} vs {labels.shape}")
    for name, ids in (("preds", preds), ("labels", labels)):
        if ids.size and (ids.min() < 0 or ids.max() >= n_classes):
            raise ValueError(f"{name} contain ids outside [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return counts


def emit_report(report: RunReport, out_dir, prefix: str = "") -> list[Path]:
    """Write {prefix}history.csv, {prefix}confusion.csv and
    {prefix}summary.txt under out_dir; returns the paths written.

    History columns, fixed order: epoch,phase,lr,train_loss,valid_loss,
    valid_acc,seconds. The confusion CSV carries class names as both header
    row and first column.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    hist_path = out_dir / f"{prefix}history.csv"
    with open(hist_path, "w") as fh:
        fh.write("epoch,phase,lr,train_loss,valid_loss,valid_acc,seconds\n")
        for r in report.history:
            fh.write(f"{r.epoch},{r.phase},{r.lr!r},{r.train_loss!r},"
                     f"{r.valid_loss!r},{r.valid_acc!r},{r.seconds!r}\n")
    paths.append(hist_path)

    conf_path = out_dir / f"{prefix}confusion.csv"
    with open(conf_path, "w") as fh:
        fh.write("class," + ",".join(report.class_names) + "\n")
        for name, row in zip(report.class_names, report.confusion):
            fh.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")
    paths.append(conf_path)

    text_path = out_dir / f"{prefix}summary.txt"
    with open(text_path, "w") as fh:
        fh.write("phase            epochs  valid_acc  wall_s\n")
        for p in report.phases:
            fh.write(f"{p.name:<16} {p.epochs_run:>6}  {p.final_valid_acc:>9.4f}"
                     f"  {p.wall_seconds:>7.2f}\n")
        fh.write(f"total_seconds: {report.total_seconds:.2f}\n")
        fh.write(f"reached_target: {'yes' if report.reached else 'no'}\n")
        fh.write(f"accuracy: {report.accuracy:.4f}\n")
        if report.eta_max is not None:
            fh.write(f"eta_max: {report.eta_max!r}\n")
    paths.append(text_path)
    return paths


def parse_history_csv(path) -> list[EpochRecord]:
    records = []
    with open(path) as fh:
        header = fh.readline().strip()
        expected = "epoch,phase,lr,train_loss,valid_loss,valid_acc,seconds"
        if header != expected:
            raise ValueError(f"unexpected history header {header!r}")
        for line in fh:
            epoch, phase, lr, tl, vl, va, sec = line.rstrip("\n").split(",")
            records.append(EpochRecord(
                epoch=int(epoch), phase=phase, lr=float(lr),
                train_loss=float(tl), valid_loss=float(vl),
                valid_acc=float(va), seconds=float(sec)))
    return records
