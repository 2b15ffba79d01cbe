"""Flat `key = value` config files and their mapping onto BenchConfig.

Lines are `key = value`, one per line; blank lines and lines starting with
`#` are ignored. Keys are validated against a fixed schema so typos fail
loudly instead of silently training with defaults.
"""

from __future__ import annotations

from .bench import BenchConfig
from .errors import ConfigError
from .finder import RangeTestConfig
from .groups import LayerGroupRates
from .schedule import CosineCycleConfig
from .train import TrainConfig

__all__ = ["CONFIG_KEYS", "parse_config_file", "build_bench_config"]


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


# key -> caster; this doubles as the list of documented config keys
CONFIG_KEYS = {
    "dataset": str,
    "model": str,
    "precision": str,
    "seed": int,
    "batch_size": int,
    "momentum": float,
    "weight_decay": float,
    "max_epochs": int,
    "augment": _bool,
    "eta_max": float,
    "eta_min": float,
    "t0": int,
    "mult": int,
    "rate_initial": float,
    "rate_mid": float,
    "rate_final": float,
    "finder_lo": float,
    "finder_hi": float,
    "finder_steps": int,
    "finder_beta": float,
    "finder_divergence": float,
    "finder_batch": int,
    "target_accuracy": float,
    "lr1": float,
    "lr2": float,
    "head_epochs": int,
    "patience": int,
    "min_delta": float,
    "blobs_per_class": int,
    "blobs_noise": float,
    "n_per_class": int,
    "split_num": int,
    "split_den": int,
}


def parse_config_file(path) -> dict:
    """Read a flat config file into a raw {key: string} dict."""
    values: dict = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {text!r}")
        key, _, value = text.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def build_bench_config(raw: dict | None = None, overrides: dict | None = None
                       ) -> BenchConfig:
    """Cast raw values per schema, apply overrides (CLI flags win), and
    assemble a validated BenchConfig. Unset keys fall back to defaults;
    `augment` defaults to on for cifar10 datasets and off otherwise."""
    merged: dict = dict(raw or {})
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    typed: dict = {}
    for key, value in merged.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            typed[key] = CONFIG_KEYS[key](value)
        except ValueError as err:
            raise ConfigError(f"bad value for {key}: {err}") from err

    def pick(keys: dict) -> dict:
        return {dest: typed[src] for src, dest in keys.items() if src in typed}

    if "augment" not in typed:
        typed["augment"] = str(typed.get("dataset", "blobs")).startswith("cifar10")
    try:
        train = TrainConfig(**pick({
            "batch_size": "batch_size", "momentum": "momentum",
            "weight_decay": "weight_decay", "max_epochs": "max_epochs",
            "seed": "seed", "precision": "precision", "augment": "augment"}))
        sched_kwargs = pick({"eta_max": "eta_max", "eta_min": "eta_min",
                             "t0": "t0", "mult": "mult"})
        sched_kwargs.setdefault("eta_max", 0.01)
        sched_kwargs.setdefault("t0", 100)
        sched = CosineCycleConfig(**sched_kwargs)
        rates = LayerGroupRates(**pick({
            "rate_initial": "initial", "rate_mid": "mid", "rate_final": "final"}))
        finder = RangeTestConfig(**pick({
            "finder_lo": "lr_lo", "finder_hi": "lr_hi", "finder_steps": "n_steps",
            "finder_beta": "smoothing_beta",
            "finder_divergence": "divergence_factor"}))
        return BenchConfig(train=train, sched=sched, rates=rates, finder=finder,
                           **pick({
                               "dataset": "dataset", "model": "model",
                               "target_accuracy": "target_accuracy",
                               "lr1": "lr1", "lr2": "lr2",
                               "head_epochs": "head_epochs",
                               "finder_batch": "finder_batch",
                               "patience": "patience", "min_delta": "min_delta",
                               "blobs_per_class": "blobs_per_class",
                               "blobs_noise": "blobs_noise",
                               "n_per_class": "n_per_class",
                               "split_num": "split_num",
                               "split_den": "split_den"}))
    except ValueError as err:
        raise ConfigError(str(err)) from err
