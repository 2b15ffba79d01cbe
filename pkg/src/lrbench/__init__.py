"""lrbench: learning-rate schedule toolkit and training benchmark.

Cosine annealing with warm restarts and doubling cycle lengths, an LR range
test with a suggestion heuristic, three-group differential learning rates,
freeze-and-precompute fine-tuning, a small numpy neural-network trainer with
checked gradients, and a CLI that benchmarks a conventional fixed-rate
baseline against the optimized pipeline.
"""

from .bench import (BenchConfig, PhaseResult, RunReport, confusion,
                    emit_report, run_conventional, run_optimized, speedup)
from .data import Dataset, augment, load_cifar10, make_blobs, normalize, split
from .errors import ConfigError, DataError, LRBenchError
from .finder import (LRFinderTrace, NoDescentFound, RangeTestConfig,
                     range_test, suggest_lr)
from .groups import (FeatureCache, GroupPartition, LayerGroupRates,
                     freeze_groups, group_lr_at, partition_layers,
                     precompute_features)
from .nn import Model, backward, build_cnn, build_mlp, forward, sgd_step
from .schedule import (CosineCycleConfig, cosine_lr, cycle_length,
                       dump_schedule, lr_at)
from .train import EarlyStopState, TrainConfig, early_stop_update, evaluate

__version__ = "0.1.0"

__all__ = [
    "BenchConfig", "PhaseResult", "RunReport", "confusion", "emit_report",
    "run_conventional", "run_optimized", "speedup",
    "Dataset", "augment", "load_cifar10", "make_blobs", "normalize", "split",
    "ConfigError", "DataError", "LRBenchError",
    "LRFinderTrace", "NoDescentFound", "RangeTestConfig", "range_test",
    "suggest_lr",
    "FeatureCache", "GroupPartition", "LayerGroupRates", "freeze_groups",
    "group_lr_at", "partition_layers", "precompute_features",
    "Model", "backward", "build_cnn", "build_mlp", "forward", "sgd_step",
    "CosineCycleConfig", "cosine_lr", "cycle_length", "dump_schedule", "lr_at",
    "EarlyStopState", "TrainConfig", "early_stop_update", "evaluate",
    "__version__",
]
