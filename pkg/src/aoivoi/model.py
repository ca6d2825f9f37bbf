"""Plant model, control law, slot/step time mapping and seeded randomness.

Every control loop is a discrete-time LTI system

    x[k+1] = A x[k] + B u[k] + w[k],    u[k] = -L x_hat[k],

sampled once every ``T_s`` transmission slots starting at slot ``T_o``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConfigError",
    "LoopNotStarted",
    "SubSystemParams",
    "PlantState",
    "RngStream",
    "LoopDynamics",
    "NOISE_STREAM",
    "OFFSET_STREAM",
    "SCHEDULER_STREAM",
    "map_slot_to_step",
    "plant_step",
    "control_input",
    "sample_noise",
    "draw_offset",
]

# substream kinds, combined with a loop index into a numpy spawn key
NOISE_STREAM = 0
OFFSET_STREAM = 1
SCHEDULER_STREAM = 2


class ConfigError(ValueError):
    """Raised for inconsistent or out-of-range configuration values."""


class LoopNotStarted(ValueError):
    """The queried slot precedes the loop's first sampling instant."""


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise ConfigError(f"{name} must be a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SubSystemParams:
    """Static description of one control loop.

    ``A`` is n x n, ``B`` n x m, ``W`` the n x n noise covariance, ``L`` the
    m x n feedback gain. ``T_s`` is the sampling period and ``T_o`` the first
    sampling slot, both counted in transmission slots. Scalars are accepted
    and promoted to 1 x 1 matrices.
    """

    id: int
    A: np.ndarray
    B: np.ndarray
    W: np.ndarray
    L: np.ndarray
    T_s: int = 1
    T_o: int = 0

    def __post_init__(self):
        for name in ("A", "B", "W", "L"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        A, B, W, L = self.A, self.B, self.W, self.L
        n = A.shape[0]
        if A.shape != (n, n):
            raise ConfigError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ConfigError(f"B must have {n} rows, got {B.shape}")
        m = B.shape[1]
        if W.shape != (n, n):
            raise ConfigError(f"W must be {n}x{n}, got {W.shape}")
        if L.shape != (m, n):
            raise ConfigError(f"L must be {m}x{n}, got {L.shape}")
        if not np.allclose(W, W.T):
            raise ConfigError("W must be symmetric")
        if np.any(np.diag(W) < 0):
            raise ConfigError("W has a negative diagonal entry")
        if np.linalg.eigvalsh(W).min() < -1e-12 * max(1.0, np.abs(W).max()):
            raise ConfigError("W must be positive semi-definite")
        if int(self.T_s) != self.T_s or self.T_s < 1:
            raise ConfigError(f"T_s must be a positive integer, got {self.T_s}")
        if int(self.T_o) != self.T_o or not 0 <= self.T_o < self.T_s:
            raise ConfigError(f"T_o must satisfy 0 <= T_o < T_s, got {self.T_o}")
        object.__setattr__(self, "T_s", int(self.T_s))
        object.__setattr__(self, "T_o", int(self.T_o))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def is_scalar(self) -> bool:
        return self.n == 1 and self.m == 1

    def with_offset(self, T_o: int) -> "SubSystemParams":
        return SubSystemParams(self.id, self.A, self.B, self.W, self.L, self.T_s, T_o)


@dataclass
class PlantState:
    """True state ``x`` of one loop at control step ``k``."""

    x: np.ndarray
    k: int = 0


class RngStream:
    """Reproducible random substream derived from a master seed.

    The substream key is a tuple of non-negative integers (for example
    ``(NOISE_STREAM, loop_id)``), so adding loops never shifts the draws of
    existing ones. Standard normals are pulled in blocks and handed out one
    at a time; the sequence only depends on the seed and the draw index.
    """

    _BLOCK = 512

    def __init__(self, master_seed: int, substream: tuple[int, ...] | int = ()):
        if isinstance(substream, int):
            substream = (substream,)
        self.master_seed = int(master_seed)
        self.substream = tuple(int(s) for s in substream)
        seq = np.random.SeedSequence(self.master_seed, spawn_key=self.substream)
        self.generator = np.random.Generator(np.random.PCG64(seq))
        self._normals = np.empty(0)
        self._pos = 0

    def normal(self, size: int) -> np.ndarray:
        """Return ``size`` independent standard normal draws."""
        out = np.empty(size)
        filled = 0
        while filled < size:
            if self._pos == len(self._normals):
                self._normals = self.generator.standard_normal(self._BLOCK)
                self._pos = 0
            take = min(size - filled, len(self._normals) - self._pos)
            out[filled:filled + take] = self._normals[self._pos:self._pos + take]
            self._pos += take
            filled += take
        return out

    def standard_normal(self) -> float:
        if self._pos == len(self._normals):
            self._normals = self.generator.standard_normal(self._BLOCK)
            self._pos = 0
        value = float(self._normals[self._pos])
        self._pos += 1
        return value

    def integers(self, low: int, high: int) -> int:
        return int(self.generator.integers(low, high))


def map_slot_to_step(t: int, T_o: int, T_s: int) -> int:
    """Control step active during slot ``t`` for a loop with offset ``T_o``."""
    if T_s < 1:
        raise ConfigError(f"T_s must be >= 1, got {T_s}")
    if t < T_o:
        raise LoopNotStarted(f"slot {t} precedes first sample at slot {T_o}")
    return (t - T_o) // T_s


def plant_step(x, u, w, p: SubSystemParams) -> np.ndarray:
    return p.A @ np.asarray(x, dtype=float) + p.B @ np.asarray(u, dtype=float) + np.asarray(w, dtype=float)


def control_input(x_hat, L) -> np.ndarray:
    return -(np.atleast_2d(np.asarray(L, dtype=float)) @ np.asarray(x_hat, dtype=float))


def sample_noise(stream: RngStream, W) -> np.ndarray:
    """Draw ``w ~ N(0, diag(W))`` with independent components.

    Only the diagonal of ``W`` is used.
    """
    var = np.diag(np.atleast_2d(np.asarray(W, dtype=float)))
    if np.any(var < 0):
        raise ConfigError("W has a negative diagonal entry")
    return np.sqrt(var) * stream.normal(len(var))


def draw_offset(stream: RngStream, T_s: int) -> int:
    """Uniform integer offset in ``{0, ..., T_s - 1}``."""
    if T_s < 1:
        raise ConfigError(f"T_s must be >= 1, got {T_s}")
    return stream.integers(0, T_s)


@dataclass(eq=False)
class LoopDynamics:
    """Arithmetic kernel used by the simulator for one loop.

    Scalar loops (n = m = 1) keep their vectors as plain floats, which is an
    order of magnitude faster than 1-element arrays; everything else uses
    numpy. ``force_array`` disables the scalar path.
    """

    params: SubSystemParams
    force_array: bool = False
    scalar: bool = field(init=False)

    def __post_init__(self):
        p = self.params
        self.scalar = p.is_scalar and not self.force_array
        if self.scalar:
            self.a = float(p.A[0, 0])
            self.b = float(p.B[0, 0])
            self.l = float(p.L[0, 0])
            self.w_std = float(np.sqrt(p.W[0, 0]))
        else:
            self.w_std = np.sqrt(np.diag(p.W))

    def zeros(self):
        return 0.0 if self.scalar else np.zeros(self.params.n)

    def zeros_input(self):
        return 0.0 if self.scalar else np.zeros(self.params.m)

    def propagate(self, x, u):
        """A x + B u."""
        if self.scalar:
            return self.a * x + self.b * u
        return self.params.A @ x + self.params.B @ u

    def control(self, x_hat):
        if self.scalar:
            return -self.l * x_hat
        return -(self.params.L @ x_hat)

    def noise(self, stream: RngStream):
        if self.scalar:
            return self.w_std * stream.standard_normal()
        return self.w_std * stream.normal(self.params.n)

    def norm(self, v) -> float:
        if self.scalar:
            return abs(v)
        return float(np.sqrt(v @ v))

    def sq_norm(self, v) -> float:
        if self.scalar:
            return v * v
        return float(v @ v)

    def to_array(self, v) -> np.ndarray:
        return np.array([v]) if self.scalar else np.array(v, dtype=float)

    def noise_sum(self, w) -> float:
        return w if self.scalar else float(np.sum(w))
