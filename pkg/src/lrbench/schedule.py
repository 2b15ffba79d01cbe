"""Learning-rate schedule math: cosine annealing with warm restarts and
cycle-length multiplication.

A schedule is defined per iteration (per mini-batch step), not per epoch.
Cycle ``k`` lasts ``t0 * mult**k`` iterations; within a cycle the rate decays
from ``eta_max`` to ``eta_min`` along a half cosine and snaps back to
``eta_max`` at the next cycle boundary.

Everything here is a pure function of its inputs and safe to call from any
number of threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO, Sequence

__all__ = [
    "CosineCycleConfig",
    "FixedSchedule",
    "ScheduleCursor",
    "InvalidScheduleError",
    "CycleOverflowError",
    "cosine_lr",
    "cycle_length",
    "locate",
    "lr_at",
    "dump_schedule",
    "write_schedule_csv",
]

# Iteration counters are kept within signed 64-bit range so schedules stay
# portable to fixed-width consumers.
MAX_ITERATIONS = 2**63 - 1


class InvalidScheduleError(ValueError):
    """A schedule config or argument violates its invariants."""


class CycleOverflowError(OverflowError):
    """A cycle length no longer fits in a 64-bit iteration counter."""


@dataclass(frozen=True)
class CosineCycleConfig:
    """Parameters of a cosine annealing schedule with warm restarts.

    ``eta_max`` is the rate at every cycle start, ``eta_min`` the value the
    decay approaches at the cycle end, ``t0`` the iteration count of the first
    cycle, and ``mult`` the cycle-length multiplication factor (each cycle is
    ``mult`` times longer than the previous one).
    """

    eta_max: float
    t0: int
    eta_min: float = 0.0
    mult: int = 2

    def __post_init__(self) -> None:
        if not (self.eta_max > self.eta_min >= 0.0):
            raise InvalidScheduleError(
                f"need eta_max > eta_min >= 0, got eta_max={self.eta_max} "
                f"eta_min={self.eta_min}"
            )
        if not isinstance(self.t0, int) or self.t0 < 1:
            raise InvalidScheduleError(f"t0 must be an integer >= 1, got {self.t0!r}")
        if not isinstance(self.mult, int) or self.mult < 1:
            raise InvalidScheduleError(f"mult must be an integer >= 1, got {self.mult!r}")


@dataclass(frozen=True)
class FixedSchedule:
    """Constant learning rate, used by the conventional baseline phases."""

    rate: float

    def __post_init__(self) -> None:
        if not self.rate > 0.0:
            raise InvalidScheduleError(f"fixed rate must be > 0, got {self.rate}")

    def rate_at(self, t_global: int) -> float:
        return self.rate


@dataclass(frozen=True)
class ScheduleCursor:
    """Position of a global iteration inside the cycle structure.

    Invariants: ``0 <= t_within < cycle_length(cycle_index)`` and ``t_global``
    equals the sum of all completed cycle lengths plus ``t_within``.
    """

    t_global: int
    cycle_index: int
    t_within: int


def cosine_lr(t_within: int, cycle_len: int, cfg: CosineCycleConfig) -> float:
    """Rate after ``t_within`` of ``cycle_len`` iterations of one cycle.

    Returns ``eta_min + 0.5 * (eta_max - eta_min) * (1 + cos(pi * t / T))``.
    The endpoints are returned exactly: ``eta_max`` at ``t_within == 0`` and
    ``eta_min`` at ``t_within == cycle_len``.
    """
    if cycle_len < 1:
        raise InvalidScheduleError(f"cycle length must be >= 1, got {cycle_len}")
    if not 0 <= t_within <= cycle_len:
        raise InvalidScheduleError(
            f"t_within={t_within} outside [0, {cycle_len}]"
        )
    if t_within == 0:
        return cfg.eta_max
    if t_within == cycle_len:
        return cfg.eta_min
    span = cfg.eta_max - cfg.eta_min
    return cfg.eta_min + 0.5 * span * (1.0 + math.cos(math.pi * t_within / cycle_len))


def cycle_length(cycle_index: int, cfg: CosineCycleConfig) -> int:
    """Length of cycle ``cycle_index``: ``t0 * mult**cycle_index``."""
    if cycle_index < 0:
        raise InvalidScheduleError(f"cycle_index must be >= 0, got {cycle_index}")
    length = cfg.t0 * cfg.mult**cycle_index
    if length > MAX_ITERATIONS:
        raise CycleOverflowError(
            f"cycle {cycle_index} length {length} exceeds the 64-bit iteration range"
        )
    return length


def locate(t_global: int, cfg: CosineCycleConfig) -> ScheduleCursor:
    """Map a global iteration to its (cycle_index, t_within) position."""
    if t_global < 0:
        raise InvalidScheduleError(f"t_global must be >= 0, got {t_global}")
    if cfg.mult == 1:
        cycle, within = divmod(t_global, cfg.t0)
        return ScheduleCursor(t_global=t_global, cycle_index=cycle, t_within=within)
    remaining = t_global
    cycle = 0
    length = cfg.t0
    while remaining >= length:
        remaining -= length
        length *= cfg.mult
        cycle += 1
    return ScheduleCursor(t_global=t_global, cycle_index=cycle, t_within=remaining)


def lr_at(t_global: int, cfg: CosineCycleConfig) -> float:
    """Annealed rate at a global iteration; restarts to ``eta_max`` at every
    cycle boundary."""
    cursor = locate(t_global, cfg)
    return cosine_lr(cursor.t_within, cycle_length(cursor.cycle_index, cfg), cfg)


def dump_schedule(cfg: CosineCycleConfig, n_iters: int) -> list[tuple[int, float]]:
    """The first ``n_iters`` points of the schedule as (t, rate) pairs."""
    if n_iters < 1:
        raise InvalidScheduleError(f"n_iters must be >= 1, got {n_iters}")
    return [(t, lr_at(t, cfg)) for t in range(n_iters)]


def write_schedule_csv(rows: Sequence[tuple[int, float]], out: IO[str]) -> None:
    """Write dump_schedule output as CSV with header ``t,lr``.

    Rates are printed with 18 significant digits so parsing the file
    reproduces the exact float values.
    """
    out.write("t,lr\n")
    for t, lr in rows:
        out.write(f"{t},{lr:.17e}\n")
