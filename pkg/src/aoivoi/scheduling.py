"""Per-slot UL/DL schedulers: greedy age, greedy value, and uniform random.

A scheduler sees a snapshot of the network at the start of a slot and
returns a :class:`~aoivoi.network.ScheduleDecision`. The snapshot is any
object providing

* ``ul_candidates()`` / ``dl_candidates()``: sorted loop ids eligible per hop
* ``step(i)``: current control step of loop ``i``
* ``controller_latest(i)``: newest step received by the controller
* ``controller_aoi(i)``: ``step(i) - controller_latest(i)``
* ``dl_gen_step(i)``: step of the packet waiting at the BS for loop ``i``
* ``ul_value(i)`` / ``dl_value(i)``: value-of-information per hop
"""
from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol

from .model import SCHEDULER_STREAM, ConfigError, RngStream
from .network import ResourceGrid, ScheduleDecision

__all__ = [
    "SchedulerKind",
    "SchedulerState",
    "Snapshot",
    "greedy_select",
    "schedule_aoi",
    "schedule_voi",
    "schedule_random",
    "make_scheduler",
]


class SchedulerKind(str, enum.Enum):
    AOI = "aoi"
    VOI = "voi"
    RANDOM = "random"

    @classmethod
    def parse(cls, value) -> "SchedulerKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ConfigError(f"unknown scheduler {value!r} (expected one of {names})") from None


class Snapshot(Protocol):
    def ul_candidates(self) -> list[int]: ...
    def dl_candidates(self) -> list[int]: ...
    def step(self, i: int) -> int: ...
    def controller_latest(self, i: int) -> int: ...
    def controller_aoi(self, i: int) -> int: ...
    def dl_gen_step(self, i: int) -> int: ...
    def ul_value(self, i: int) -> float: ...
    def dl_value(self, i: int) -> float: ...


@dataclass
class SchedulerState:
    previous_ul: tuple[int, ...] = ()
    rng: RngStream | None = None


def greedy_select(
    candidates: Iterable[int],
    key: Callable[[int], float],
    r: int,
    skip_zero: bool = False,
) -> tuple[int, ...]:
    """Up to ``r`` candidates with the largest key.

    ``candidates`` must be in ascending id order; ``nlargest`` is stable, so
    ties go to the lowest id.
    """
    chosen = heapq.nlargest(r, candidates, key=key)
    if skip_zero:
        chosen = [i for i in chosen if key(i) > 0]
    return tuple(chosen)


def schedule_aoi(snap: Snapshot, grid: ResourceGrid, state: SchedulerState) -> ScheduleDecision:
    """Greedy max-age scheduling on the bottleneck hop, mirrored on the other.

    UL bottleneck: the DL forwards exactly last slot's UL grants. DL
    bottleneck: the DL is greedy over what the BS holds, and the UL fetches
    the loops the DL will pick next slot. Both hops rank by the controller
    age at the start of the slot, and the UL never uses more than
    ``min(R_UL, R_DL)`` resources since the DL could not forward more.
    """
    dl_cands = snap.dl_candidates()
    if grid.ul_is_bottleneck:
        eligible = set(dl_cands)
        dl = tuple(i for i in state.previous_ul if i in eligible)
    else:
        dl = greedy_select(dl_cands, snap.controller_aoi, grid.R_DL)
    ul = greedy_select(snap.ul_candidates(), snap.controller_aoi, min(grid.R_UL, grid.R_DL))
    state.previous_ul = ul
    return ScheduleDecision(ul=ul, dl=dl)


def schedule_voi(snap: Snapshot, grid: ResourceGrid, state: SchedulerState | None = None) -> ScheduleDecision:
    """Greedy max-value scheduling, each hop valued independently.

    Zero-valued candidates are never granted.
    """
    ul = greedy_select(snap.ul_candidates(), snap.ul_value, grid.R_UL, skip_zero=True)
    dl = greedy_select(snap.dl_candidates(), snap.dl_value, grid.R_DL, skip_zero=True)
    return ScheduleDecision(ul=ul, dl=dl)


def schedule_random(snap: Snapshot, grid: ResourceGrid, state: SchedulerState) -> ScheduleDecision:
    rng = state.rng.generator

    def pick(cands: list[int], r: int) -> tuple[int, ...]:
        if len(cands) <= r:
            return tuple(cands)
        idx = rng.choice(len(cands), size=r, replace=False)
        return tuple(sorted(cands[j] for j in idx))

    return ScheduleDecision(ul=pick(snap.ul_candidates(), grid.R_UL), dl=pick(snap.dl_candidates(), grid.R_DL))


_POLICIES = {
    SchedulerKind.AOI: schedule_aoi,
    SchedulerKind.VOI: schedule_voi,
    SchedulerKind.RANDOM: schedule_random,
}


@dataclass
class Scheduler:
    """Stateful wrapper binding a policy, its state and the resource grid."""

    kind: SchedulerKind
    grid: ResourceGrid
    state: SchedulerState = field(default_factory=SchedulerState)

    def __call__(self, snap: Snapshot) -> ScheduleDecision:
        return _POLICIES[self.kind](snap, self.grid, self.state)


def make_scheduler(kind, grid: ResourceGrid, seed: int = 0) -> Scheduler:
    kind = SchedulerKind.parse(kind)
    state = SchedulerState()
    if kind is SchedulerKind.RANDOM:
        state.rng = RngStream(seed, (SCHEDULER_STREAM, 0))
    return Scheduler(kind, grid, state)
