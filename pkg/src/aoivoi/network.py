"""Two-hop packet flow: sensor -> base station (UL) -> controller (DL).

Each sensor and the base station keep at most one packet per loop; a newer
packet replaces an older one. Scheduled transmissions never fail and take
effect at the end of the slot.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .estimation import RollingEstimator
from .model import ConfigError

__all__ = [
    "ContractViolation",
    "Packet",
    "SensorBuffer",
    "BsBuffer",
    "ResourceGrid",
    "ScheduleDecision",
    "maybe_generate",
    "ul_candidates",
    "dl_candidates",
    "deliver",
]


class ContractViolation(RuntimeError):
    """A scheduler or the simulator broke a model invariant."""


@dataclass(frozen=True)
class Packet:
    loop_id: int
    gen_step: int
    payload: object


@dataclass
class SensorBuffer:
    pending: Packet | None = None
    delivered_up_to: int = -1


@dataclass
class BsBuffer:
    """Base-station buffer of one loop."""

    packet: Packet | None = None
    forwarded_up_to: int = -1


@dataclass(frozen=True)
class ResourceGrid:
    """Per-slot resource counts of the disjoint UL and DL pools."""

    R_UL: int
    R_DL: int

    def __post_init__(self):
        for name in ("R_UL", "R_DL"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value}")

    @property
    def ul_is_bottleneck(self) -> bool:
        # equality is treated as an UL bottleneck
        return self.R_UL <= self.R_DL


@dataclass(frozen=True)
class ScheduleDecision:
    ul: tuple[int, ...] = ()
    dl: tuple[int, ...] = ()

    def validate(self, grid: ResourceGrid, ul_cands: Iterable[int], dl_cands: Iterable[int]) -> None:
        if len(self.ul) > grid.R_UL:
            raise ContractViolation(f"{len(self.ul)} UL grants exceed R_UL={grid.R_UL}")
        if len(self.dl) > grid.R_DL:
            raise ContractViolation(f"{len(self.dl)} DL grants exceed R_DL={grid.R_DL}")
        if len(set(self.ul)) != len(self.ul) or len(set(self.dl)) != len(self.dl):
            raise ContractViolation("duplicate grant in decision")
        bad = set(self.ul).difference(ul_cands)
        if bad:
            raise ContractViolation(f"UL grant to non-candidate loops {sorted(bad)}")
        bad = set(self.dl).difference(dl_cands)
        if bad:
            raise ContractViolation(f"DL grant to non-candidate loops {sorted(bad)}")


def maybe_generate(t: int, loop_id: int, T_o: int, T_s: int, k: int, x, sensor: SensorBuffer) -> bool:
    """Sample the plant if slot ``t`` starts a sampling period.

    The new packet replaces whatever is pending. Returns True on generation.
    """
    if t < T_o or (t - T_o) % T_s:
        return False
    sensor.pending = Packet(loop_id, k, x)
    return True


def ul_candidates(sensors: Sequence[SensorBuffer], bs_latest: Sequence[int]) -> list[int]:
    """Loops whose pending sample is newer than anything the BS holds."""
    return [
        i for i, (s, m) in enumerate(zip(sensors, bs_latest))
        if s.pending is not None and s.pending.gen_step > m
    ]


def dl_candidates(bs_buffers: Sequence[BsBuffer], ctrl_latest: Sequence[int]) -> list[int]:
    """Loops whose BS packet is newer than the controller's latest sample."""
    return [
        i for i, (b, s) in enumerate(zip(bs_buffers, ctrl_latest))
        if b.packet is not None and b.packet.gen_step > s
    ]


def deliver(
    decision: ScheduleDecision,
    sensors: Sequence[SensorBuffer],
    bs_buffers: Sequence[BsBuffer],
    bs_views: Sequence[RollingEstimator],
    ctrl_views: Sequence[RollingEstimator],
) -> None:
    """Commit one slot's transmissions.

    DL forwards what the BS held at the start of the slot, so a packet that
    arrives on UL in this slot can go out on DL at the earliest next slot.
    """
    for i in decision.dl:
        buf = bs_buffers[i]
        pkt = buf.packet
        if pkt is None or pkt.gen_step <= ctrl_views[i].latest_step:
            raise ContractViolation(f"loop {i}: DL grant without a fresh BS packet")
        buf.packet = None
        buf.forwarded_up_to = pkt.gen_step
        ctrl_views[i].receive(pkt.gen_step, pkt.payload)
    for i in decision.ul:
        sensor = sensors[i]
        pkt = sensor.pending
        if pkt is None or pkt.gen_step <= bs_views[i].latest_step:
            raise ContractViolation(f"loop {i}: UL grant without a fresh sensor packet")
        sensor.pending = None
        sensor.delivered_up_to = pkt.gen_step
        bs_buffers[i].packet = pkt
        bs_views[i].receive(pkt.gen_step, pkt.payload)
