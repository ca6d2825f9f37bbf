"""Slot-level simulation of N control loops sharing a two-hop cellular link.

Every slot runs the same pipeline:

1. loops whose sampling period starts now sample their plant (a loop is
   activated at its first sampling slot ``T_o``);
2. the scheduler picks UL and DL grants from the start-of-slot state;
3. granted transmissions land at the end of the slot (DL first, so nothing
   is relayed within one slot);
4. loops whose period ends now finalize ``x_hat[k]``, apply
   ``u[k] = -L x_hat[k]`` and advance the plant to ``x[k+1]``.

Age and error are step-level quantities: every slot of step ``k`` carries
the controller's age ``k - s`` and error ``x[k] - x_hat[k]`` as finalized at
the end of that step.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .estimation import ErrorGrowth, RollingEstimator
from .model import (
    NOISE_STREAM,
    OFFSET_STREAM,
    ConfigError,
    LoopDynamics,
    RngStream,
    SubSystemParams,
    draw_offset,
)
from .network import (
    BsBuffer,
    ContractViolation,
    Packet,
    ResourceGrid,
    ScheduleDecision,
    SensorBuffer,
    deliver,
    dl_candidates,
    ul_candidates,
)
from .scheduling import SchedulerKind, make_scheduler

__all__ = [
    "ClassSpec",
    "RunConfig",
    "RunMetrics",
    "ResultRow",
    "SweepResult",
    "Simulation",
    "paper_classes",
    "run_simulation",
    "compute_avg_aoi",
    "compute_iae",
    "run_sweep",
]

log = logging.getLogger(__name__)

PAPER_A = (0.75, 1.0, 1.25, 1.5)


@dataclass(frozen=True, eq=False)
class ClassSpec:
    """A plant class; ``L`` defaults to the deadbeat gain ``A`` (needs B = I)."""

    A: object
    B: object = 1.0
    W: object = 1.0
    L: object = None
    count: int | None = None
    label: str = ""

    def params(self, loop_id: int, T_s: int, T_o: int = 0) -> SubSystemParams:
        L = self.A if self.L is None else self.L
        return SubSystemParams(loop_id, self.A, self.B, self.W, L, T_s, T_o)

    def name(self) -> str:
        if self.label:
            return self.label
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        return f"A={A[0, 0]:g}" if A.size == 1 else f"A{A.shape[0]}x{A.shape[1]}"


def paper_classes(noise_var: float = 1.0, a_values: Sequence[float] = PAPER_A) -> tuple[ClassSpec, ...]:
    """Scalar plants with deadbeat gain, B = 1 and noise variance ``noise_var``."""
    return tuple(ClassSpec(A=a, B=1.0, W=noise_var, L=a) for a in a_values)


@dataclass(frozen=True)
class RunConfig:
    """One simulation run.

    Loops are assigned to classes round-robin (loop ``i`` belongs to class
    ``i % len(classes)`` for equal counts), so growing ``N`` keeps the class
    of every existing loop and, with per-loop random substreams, its noise.
    """

    N: int = 40
    classes: tuple[ClassSpec, ...] = field(default_factory=paper_classes)
    T_s: int = 10
    R_UL: int = 3
    R_DL: int = 3
    T_sim: int = 20000
    seed: int = 0
    scheduler: SchedulerKind = SchedulerKind.AOI
    warmup: int = 0
    keep_traces: bool = False
    record_decisions: bool = False
    check_invariants: bool = False
    force_array: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scheduler", SchedulerKind.parse(self.scheduler))
        object.__setattr__(self, "classes", tuple(self.classes))
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError(f"N must be a positive integer, got {self.N}")
        if not self.classes:
            raise ConfigError("at least one plant class is required")
        if int(self.T_s) != self.T_s or self.T_s < 1:
            raise ConfigError(f"T_s must be a positive integer, got {self.T_s}")
        if self.T_sim < 1:
            raise ConfigError(f"T_sim must be >= 1, got {self.T_sim}")
        if not 0 <= self.warmup < self.T_sim:
            raise ConfigError(f"warmup must be in [0, T_sim), got {self.warmup}")
        ResourceGrid(self.R_UL, self.R_DL)
        self.class_counts()

    @property
    def grid(self) -> ResourceGrid:
        return ResourceGrid(self.R_UL, self.R_DL)

    def class_counts(self) -> tuple[int, ...]:
        counts = [c.count for c in self.classes]
        if all(c is None for c in counts):
            if self.N % len(self.classes):
                raise ConfigError(
                    f"N={self.N} cannot be split equally over {len(self.classes)} classes"
                )
            return (self.N // len(self.classes),) * len(self.classes)
        if any(c is None for c in counts):
            raise ConfigError("either all or no classes must carry a count")
        if any(c < 0 for c in counts) or sum(counts) != self.N:
            raise ConfigError(f"class counts {counts} do not sum to N={self.N}")
        return tuple(counts)

    def loop_classes(self) -> list[int]:
        """Class index of every loop, filling classes round-robin."""
        remaining = list(self.class_counts())
        order = []
        while len(order) < self.N:
            for j, left in enumerate(remaining):
                if left:
                    order.append(j)
                    remaining[j] -= 1
        return order


@dataclass
class RunMetrics:
    avg_aoi: float
    iae: float
    per_loop_avg_aoi: np.ndarray
    per_loop_iae: np.ndarray
    loop_class: np.ndarray
    class_names: tuple[str, ...]
    class_avg_aoi: tuple[float, ...]
    class_iae: tuple[float, ...]
    final_aoi: np.ndarray
    last_dl_slot: np.ndarray
    dl_count: np.ndarray
    ul_count: np.ndarray
    starved: np.ndarray
    offsets: np.ndarray
    noise_sums: np.ndarray
    aoi_trace: np.ndarray | None = None
    error_trace: np.ndarray | None = None
    decisions: list[ScheduleDecision] | None = None

    @property
    def noise_checksum(self) -> str:
        h = hashlib.sha256()
        for s in self.noise_sums:
            h.update(repr(float(s)).encode())
        return h.hexdigest()[:16]

    @property
    def starved_by_class(self) -> tuple[int, ...]:
        return tuple(
            int(self.starved[self.loop_class == j].sum()) for j in range(len(self.class_names))
        )


def compute_avg_aoi(trace) -> float:
    """Mean of a loops x slots age trace; NaN marks inactive slots (counted as 0)."""
    trace = np.atleast_2d(np.asarray(trace, dtype=float))
    return float(np.nansum(trace) / trace.size)


def compute_iae(trace) -> float:
    """Per-loop average of the time-summed error norms of a loops x slots trace."""
    trace = np.atleast_2d(np.asarray(trace, dtype=float))
    return float(np.nansum(trace) / trace.shape[0])


class Simulation:
    """Mutable state of one run; also serves as the scheduler's snapshot."""

    def __init__(self, config: RunConfig):
        self.config = config
        cfg = config
        self.grid = cfg.grid
        N = cfg.N
        self.loop_class = np.array(cfg.loop_classes(), dtype=int)
        self.params: list[SubSystemParams] = []
        self.dynamics: list[LoopDynamics] = []
        self.growth: list[ErrorGrowth] = []
        self.noise_streams: list[RngStream] = []
        shared_growth: dict[int, ErrorGrowth] = {}
        for i in range(N):
            spec = cfg.classes[self.loop_class[i]]
            T_o = draw_offset(RngStream(cfg.seed, (OFFSET_STREAM, i)), cfg.T_s)
            p = spec.params(i, cfg.T_s, T_o)
            self.params.append(p)
            self.dynamics.append(LoopDynamics(p, force_array=cfg.force_array))
            j = int(self.loop_class[i])
            if j not in shared_growth:
                shared_growth[j] = ErrorGrowth(p)
            self.growth.append(shared_growth[j])
            self.noise_streams.append(RngStream(cfg.seed, (NOISE_STREAM, i)))

        # loops grouped by sampling phase
        self._phase: list[list[int]] = [[] for _ in range(cfg.T_s)]
        for i, p in enumerate(self.params):
            self._phase[p.T_o].append(i)

        self.active = [False] * N
        self.k = [0] * N
        self.x: list = [None] * N
        self.sensors = [SensorBuffer() for _ in range(N)]
        self.bs_buffers = [BsBuffer() for _ in range(N)]
        self.bs_views = [RollingEstimator(d) for d in self.dynamics]
        self.ctrl_views = [RollingEstimator(d) for d in self.dynamics]
        # UL value only changes when a step begins or the BS receives
        self._ul_value = [0.0] * N
        self.ul_value = self._ul_value.__getitem__
        self._ctrl_aoi = [0] * N
        self.controller_aoi = self._ctrl_aoi.__getitem__
        self._ul_set: set[int] = set()
        self._dl_set: set[int] = set()
        self.scheduler = make_scheduler(cfg.scheduler, self.grid, cfg.seed)
        self.t = 0

        self._aoi_acc = [0.0] * N
        self._err_acc = [0.0] * N
        self.last_dl_slot = np.full(N, -1, dtype=int)
        self.dl_count = np.zeros(N, dtype=int)
        self.ul_count = np.zeros(N, dtype=int)
        self.noise_sums = [0.0] * N
        self._steps: list[list] | None = [[] for _ in range(N)] if cfg.keep_traces else None
        self.decisions: list[ScheduleDecision] | None = [] if cfg.record_decisions else None

    # snapshot interface ---------------------------------------------------
    def ul_candidates(self) -> list[int]:
        return sorted(self._ul_set)

    def dl_candidates(self) -> list[int]:
        return sorted(self._dl_set)

    def step(self, i: int) -> int:
        return self.k[i]

    def controller_latest(self, i: int) -> int:
        return self.ctrl_views[i].latest_step

    def bs_latest(self, i: int) -> int:
        return self.bs_views[i].latest_step

    def dl_gen_step(self, i: int) -> int:
        return self.bs_buffers[i].packet.gen_step

    def bs_aoi(self, i: int) -> int:
        return self.k[i] - self.bs_views[i].latest_step

    def dl_value(self, i: int) -> float:
        d = self.dynamics[i]
        return d.sq_norm(self.bs_views[i].estimate - self.ctrl_views[i].estimate)

    # slot pipeline --------------------------------------------------------
    def _noise(self, i: int):
        w = self.dynamics[i].noise(self.noise_streams[i])
        self.noise_sums[i] += self.dynamics[i].noise_sum(w)
        return w

    def _accumulate(self, i: int, first: int, last: int, aoi: int, err: float) -> None:
        lo = max(first, self.config.warmup)
        if last >= lo:
            width = last - lo + 1
            self._aoi_acc[i] += aoi * width
            self._err_acc[i] += err * width
        if self._steps is not None:
            self._steps[i].append((first, last, aoi, err))

    def run_slot(self) -> ScheduleDecision:
        t = self.t
        cfg = self.config
        T_s = cfg.T_s

        for i in self._phase[t % T_s]:
            if not self.active[i]:
                self.active[i] = True
                self.x[i] = self._noise(i)
            else:
                self.k[i] += 1
            self.sensors[i].pending = Packet(i, self.k[i], self.x[i])
            self._ul_value[i] = self.growth[i](self.k[i] - self.bs_views[i].latest_step)
            self._ctrl_aoi[i] = self.k[i] - self.ctrl_views[i].latest_step
            # the BS can never hold the sample of a step that just began
            self._ul_set.add(i)

        decision = self.scheduler(self)
        decision.validate(self.grid, self._ul_set, self._dl_set)
        deliver(decision, self.sensors, self.bs_buffers, self.bs_views, self.ctrl_views)
        for i in decision.dl:
            self._dl_set.discard(i)
            self._ctrl_aoi[i] = self.k[i] - self.ctrl_views[i].latest_step
            self.last_dl_slot[i] = t
            self.dl_count[i] += 1
        for i in decision.ul:
            self._ul_set.discard(i)
            self._ul_value[i] = 0.0
            self._dl_set.add(i)
            self.ul_count[i] += 1
        if self.decisions is not None:
            self.decisions.append(decision)
        if cfg.check_invariants:
            self._check_invariants()

        for i in self._phase[(t + 1) % T_s]:
            if self.active[i]:
                self._commit(i, t)
        self.t = t + 1
        return decision

    def _commit(self, i: int, t: int) -> None:
        """End of step k: finalize the estimate, apply the input, advance the plant."""
        dyn = self.dynamics[i]
        ctrl = self.ctrl_views[i]
        k = self.k[i]
        x_hat = ctrl.estimate
        self._accumulate(i, t - self.config.T_s + 1, t, k - ctrl.latest_step, dyn.norm(self.x[i] - x_hat))
        u = dyn.control(x_hat)
        self.x[i] = dyn.propagate(self.x[i], u) + self._noise(i)
        ctrl.advance(u)
        self.bs_views[i].advance(u)

    def _check_invariants(self) -> None:
        t = self.t
        ctrl_latest = [v.latest_step for v in self.ctrl_views]
        bs_latest = [v.latest_step for v in self.bs_views]
        if set(ul_candidates(self.sensors, bs_latest)) != self._ul_set:
            raise ContractViolation(f"slot {t}: UL candidate set out of sync")
        if set(dl_candidates(self.bs_buffers, ctrl_latest)) != self._dl_set:
            raise ContractViolation(f"slot {t}: DL candidate set out of sync")
        for i in range(self.config.N):
            if ctrl_latest[i] > bs_latest[i]:
                raise ContractViolation(f"slot {t}, loop {i}: controller ahead of BS")
            b = self.bs_buffers[i].packet
            if b is not None and b.gen_step <= self.bs_buffers[i].forwarded_up_to:
                raise ContractViolation(f"slot {t}, loop {i}: stale packet buffered at BS")

    def run(self) -> RunMetrics:
        T_sim = self.config.T_sim
        while self.t < T_sim:
            self.run_slot()
        return self.finish()

    def finish(self) -> RunMetrics:
        """Account the unfinished last step of every loop and build metrics."""
        cfg = self.config
        T_end = self.t - 1
        final_aoi = np.zeros(cfg.N, dtype=int)
        for i in range(cfg.N):
            if not self.active[i]:
                continue
            ctrl = self.ctrl_views[i]
            final_aoi[i] = self.k[i] - ctrl.latest_step
            start = self.params[i].T_o + self.k[i] * cfg.T_s
            end_of_step = start + cfg.T_s - 1
            if end_of_step > T_end:
                err = self.dynamics[i].norm(self.x[i] - ctrl.estimate)
                self._accumulate(i, start, T_end, final_aoi[i], err)

        window = self.t - cfg.warmup
        per_loop_aoi = np.array(self._aoi_acc) / window
        per_loop_iae = np.array(self._err_acc)
        n_classes = len(cfg.classes)
        class_aoi, class_iae = [], []
        for j in range(n_classes):
            mask = self.loop_class == j
            class_aoi.append(float(per_loop_aoi[mask].mean()) if mask.any() else math.nan)
            class_iae.append(float(per_loop_iae[mask].mean()) if mask.any() else math.nan)
        metrics = RunMetrics(
            avg_aoi=float(per_loop_aoi.mean()),
            iae=float(per_loop_iae.mean()),
            per_loop_avg_aoi=per_loop_aoi,
            per_loop_iae=per_loop_iae,
            loop_class=self.loop_class.copy(),
            class_names=tuple(c.name() for c in cfg.classes),
            class_avg_aoi=tuple(class_aoi),
            class_iae=tuple(class_iae),
            final_aoi=final_aoi,
            last_dl_slot=self.last_dl_slot.copy(),
            dl_count=self.dl_count.copy(),
            ul_count=self.ul_count.copy(),
            starved=self.last_dl_slot < self.t // 2,
            offsets=np.array([p.T_o for p in self.params]),
            noise_sums=np.array(self.noise_sums),
            decisions=self.decisions,
        )
        if self._steps is not None:
            metrics.aoi_trace, metrics.error_trace = self._expand_traces()
        return metrics

    def _expand_traces(self) -> tuple[np.ndarray, np.ndarray]:
        shape = (self.config.N, self.t)
        aoi = np.full(shape, np.nan)
        err = np.full(shape, np.nan)
        for i, steps in enumerate(self._steps):
            for first, last, a, e in steps:
                aoi[i, first:last + 1] = a
                err[i, first:last + 1] = e
        return aoi, err


def run_simulation(config: RunConfig) -> RunMetrics:
    return Simulation(config).run()


@dataclass(frozen=True)
class ResultRow:
    scheduler: str
    N: int
    R_UL: int
    R_DL: int
    T_s: int
    T_sim: int
    seed: int
    avg_aoi: float
    iae: float
    class_avg_aoi: tuple[float, ...]
    class_iae: tuple[float, ...]
    starved_loops: int
    starved_by_class: tuple[int, ...]
    noise_checksum: str

    @classmethod
    def from_metrics(cls, config: RunConfig, m: RunMetrics) -> "ResultRow":
        return cls(
            scheduler=config.scheduler.value,
            N=config.N,
            R_UL=config.R_UL,
            R_DL=config.R_DL,
            T_s=config.T_s,
            T_sim=config.T_sim,
            seed=config.seed,
            avg_aoi=m.avg_aoi,
            iae=m.iae,
            class_avg_aoi=m.class_avg_aoi,
            class_iae=m.class_iae,
            starved_loops=int(m.starved.sum()),
            starved_by_class=m.starved_by_class,
            noise_checksum=m.noise_checksum,
        )

    @property
    def sort_key(self):
        return (self.scheduler, self.N, self.R_UL, self.R_DL, self.T_s, self.T_sim, self.seed)


@dataclass
class SweepResult:
    rows: list[ResultRow]
    failures: list[tuple[RunConfig, str]] = field(default_factory=list)
    # (aoi, error) slot traces per cell, only for configs with keep_traces
    traces: dict = field(default_factory=dict)

    @property
    def contract_failures(self) -> list[tuple[RunConfig, str]]:
        return [f for f in self.failures if f[1].startswith("ContractViolation")]


def _run_cell(config: RunConfig):
    try:
        metrics = run_simulation(config)
    except Exception as exc:  # recorded per cell, the sweep goes on
        log.error("cell %s failed: %s", config, exc)
        return None, f"{type(exc).__name__}: {exc}", None
    traces = (metrics.aoi_trace, metrics.error_trace) if config.keep_traces else None
    return ResultRow.from_metrics(config, metrics), None, traces


def run_sweep(configs: Sequence[RunConfig], repetitions: int = 1, n_jobs: int = 1) -> SweepResult:
    """Run every config with seeds ``seed, seed + 1, ...``.

    Seeds depend only on the repetition, never on the scheduler, so runs that
    differ only in scheduler see identical offsets and noise.
    """
    if repetitions < 1:
        raise ConfigError(f"repetitions must be >= 1, got {repetitions}")
    cells = [replace(c, seed=c.seed + r) for c in configs for r in range(repetitions)]
    if n_jobs == 1:
        outcomes = [_run_cell(c) for c in cells]
    else:
        from joblib import Parallel, delayed

        outcomes = Parallel(n_jobs=n_jobs)(delayed(_run_cell)(c) for c in cells)
    rows, failures, traces = [], [], {}
    for cell, (row, err, trace) in zip(cells, outcomes):
        if err is None:
            rows.append(row)
        else:
            failures.append((cell, err))
        if trace is not None:
            traces[cell] = trace
    rows.sort(key=lambda r: r.sort_key)
    return SweepResult(rows, failures, traces)
