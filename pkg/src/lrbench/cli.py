"""Command-line interface.

Subcommands:
  lr-find        run the LR range test and print a suggested peak rate
  train          train one model under the restarting cosine schedule
  benchmark      run conventional and optimized pipelines, report speedup
  schedule-dump  write the cosine schedule as CSV for inspection
  confusion      build a confusion matrix from a true/pred CSV

Exit codes: 0 success, 2 config error, 3 data error, 4 no usable range-test
suggestion.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .bench import (PhaseResult, RunReport, build_model, confusion,
                    emit_report, load_bench_dataset, predictions,
                    run_conventional, run_optimized, speedup)
from .config import build_bench_config, parse_config_file
from .errors import ConfigError, DataError
from .finder import NoDescentFound, range_test, suggest_lr, write_trace_csv
from .schedule import dump_schedule, lr_at, write_schedule_csv
from .train import EarlyStopState, train_phase

__all__ = ["main", "run"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lrbench",
        description="Learning-rate schedule toolkit and training benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int, help="RNG seed override")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--dataset", help="blobs or cifar10:PATH")
        sp.add_argument("--model", choices=("mlp", "cnn"))
        sp.add_argument("--precision", choices=("f32", "f64"))

    add_common(sub.add_parser("lr-find", help="suggest a peak learning rate"))
    add_common(sub.add_parser("train", help="train under the cosine schedule"))
    add_common(sub.add_parser("benchmark",
                              help="compare conventional vs optimized training"))
    sp = sub.add_parser("schedule-dump", help="dump the schedule as CSV")
    add_common(sp)
    sp.add_argument("--iters", type=int, default=1500,
                    help="number of iterations to dump")
    sp = sub.add_parser("confusion", help="confusion matrix from a CSV")
    add_common(sp)
    sp.add_argument("--pred", required=True,
                    help="CSV with header true,pred and one id pair per line")
    return parser


def _bench_config(args):
    raw = parse_config_file(args.config) if args.config else {}
    overrides = {"dataset": args.dataset, "model": args.model,
                 "seed": args.seed, "precision": args.precision}
    return build_bench_config(raw, overrides)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_lr_find(args) -> None:
    cfg = _bench_config(args)
    train_ds, _ = load_bench_dataset(cfg)
    model = build_model(cfg, train_ds.images.shape[1:], train_ds.n_classes)
    trace = range_test(model, (train_ds.images, train_ds.labels), cfg.finder,
                       rng_seed=cfg.train.seed, batch_size=cfg.train.batch_size)
    trace_path = _out_dir(args) / "finder_trace.csv"
    with open(trace_path, "w") as fh:
        write_trace_csv(trace, fh)
    print(f"trace: {trace_path} ({len(trace.steps)} steps, {trace.stop_reason})")
    suggestion = suggest_lr(trace)
    print(f"suggested_lr: {suggestion!r}")


def cmd_train(args) -> None:
    cfg = _bench_config(args)
    train_ds, valid_ds = load_bench_dataset(cfg)
    model = build_model(cfg, train_ds.images.shape[1:], train_ds.n_classes)
    history = []
    start = time.perf_counter()
    acc, epochs, reached = train_phase(
        model, train_ds.images, train_ds.labels, valid_ds.images,
        valid_ds.labels, phase_name="sgdr", phase_index=1,
        lr_fn=lambda t: lr_at(t, cfg.sched), cfg=cfg.train,
        max_epochs=cfg.train.max_epochs,
        stopper=EarlyStopState(cfg.patience, cfg.min_delta),
        target_accuracy=cfg.target_accuracy, history=history)
    wall = time.perf_counter() - start
    conf = confusion(predictions(model, valid_ds.images), valid_ds.labels,
                     valid_ds.n_classes)
    report = RunReport(phases=[PhaseResult("sgdr", epochs, acc, wall)],
                       total_seconds=wall, confusion=conf, reached=reached,
                       history=history, class_names=list(valid_ds.class_names))
    for path in emit_report(report, _out_dir(args)):
        print(f"wrote {path}")
    print(f"valid_acc: {acc:.4f} after {epochs} epochs "
          f"({'target reached' if reached else 'stopped early'})")


def cmd_benchmark(args) -> None:
    cfg = _bench_config(args)
    data = load_bench_dataset(cfg)
    out = _out_dir(args)
    conv = run_conventional(cfg, data)
    opt = run_optimized(cfg, data)
    for path in emit_report(conv, out, "conventional_"):
        print(f"wrote {path}")
    for path in emit_report(opt, out, "optimized_"):
        print(f"wrote {path}")
    print(f"conventional: acc={conv.accuracy:.4f} "
          f"time={conv.total_seconds:.2f}s reached={conv.reached}")
    print(f"optimized:    acc={opt.accuracy:.4f} "
          f"time={opt.total_seconds:.2f}s reached={opt.reached} "
          f"eta_max={opt.eta_max!r}")
    print(f"speedup: {speedup(conv, opt):.2f}")


def cmd_schedule_dump(args) -> None:
    cfg = _bench_config(args)
    rows = dump_schedule(cfg.sched, args.iters)
    path = _out_dir(args) / "schedule.csv"
    with open(path, "w") as fh:
        write_schedule_csv(rows, fh)
    print(f"wrote {path} ({len(rows)} iterations)")


def cmd_confusion(args) -> None:
    try:
        with open(args.pred) as fh:
            header = fh.readline().strip()
            if header != "true,pred":
                raise DataError(
                    f"{args.pred}: expected header 'true,pred', got {header!r}")
            pairs = []
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    true_id, pred_id = map(int, line.strip().split(","))
                except ValueError as err:
                    raise DataError(f"{args.pred}:{lineno}: {err}") from err
                pairs.append((true_id, pred_id))
    except OSError as err:
        raise DataError(f"cannot read {args.pred}: {err}") from err
    if not pairs:
        raise DataError(f"{args.pred}: no prediction rows")
    labels = np.array([p[0] for p in pairs])
    preds = np.array([p[1] for p in pairs])
    n_classes = int(max(labels.max(), preds.max())) + 1
    conf = confusion(preds, labels, n_classes)
    names = [f"c{i}" for i in range(n_classes)]
    path = _out_dir(args) / "confusion.csv"
    with open(path, "w") as fh:
        fh.write("class," + ",".join(names) + "\n")
        for name, row in zip(names, conf):
            fh.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")
    acc = float(np.trace(conf)) / float(conf.sum())
    print(f"wrote {path}")
    print(f"accuracy: {acc:.6f} over {len(pairs)} samples")


_HANDLERS = {
    "lr-find": cmd_lr_find,
    "train": cmd_train,
    "benchmark": cmd_benchmark,
    "schedule-dump": cmd_schedule_dump,
    "confusion": cmd_confusion,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _HANDLERS[args.command](args)
    return 0


def run(argv=None) -> int:
    """Console entry point mapping errors to documented exit codes."""
    try:
        return main(argv)
    except NoDescentFound as err:
        print(f"error: {err}", file=sys.stderr)
        return 4
    except DataError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(run())
