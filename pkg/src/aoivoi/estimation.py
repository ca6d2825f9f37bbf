"""Open-loop state estimation from the freshest received sample.

An estimator that last received ``z = x[s]`` and knows every input applied
since predicts the current state by rolling ``z`` forward through the
noise-free dynamics. The prediction error is a sum of the ``Δ = k - s``
noise terms since the sample was taken, so its expected squared norm depends
only on the age ``Δ``::

    g(Δ) = sum_{r=0}^{Δ-1} tr((A^T)^r A^r W)

which is the uplink value-of-information. The downlink value is the squared
gap between the base-station and controller estimates.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .model import LoopDynamics, SubSystemParams

__all__ = [
    "EstimatorView",
    "RollingEstimator",
    "ErrorSample",
    "ErrorGrowth",
    "estimate_state",
    "expected_error_sq",
    "estimation_error",
    "voi_uplink",
    "voi_downlink",
    "aoi_of",
]


@dataclass
class EstimatorView:
    """Information set of one receiver (controller or base station).

    ``input_history`` holds ``u[latest_step], ..., u[current_step - 1]``.
    Before the first reception ``latest_sample`` is None, ``latest_step`` is
    -1 and the history starts at ``u[0]``; the estimate then rolls out from
    the prior mean 0.
    """

    latest_sample: np.ndarray | None = None
    latest_step: int = -1
    input_history: list = field(default_factory=list)
    current_step: int = 0

    @property
    def aoi(self) -> int:
        return aoi_of(self)


def aoi_of(view: EstimatorView) -> int:
    """Elapsed control steps since the newest received sample was taken.

    A receiver that never got a sample counts from a virtual sample at
    step -1, so its age is ``current_step + 1``.
    """
    return view.current_step - view.latest_step


def estimate_state(view: EstimatorView, p: SubSystemParams) -> np.ndarray:
    """Conditional mean of the current state given the view's information.

    ``A^Δ z + sum_{q=1}^{Δ} A^{q-1} B u[k-q]``; with no sample yet, ``z`` is
    the zero prior placed at step 0.
    """
    history = [np.atleast_1d(np.asarray(u, dtype=float)) for u in view.input_history]
    if view.latest_sample is None:
        z = np.zeros(p.n)
    else:
        z = np.atleast_1d(np.asarray(view.latest_sample, dtype=float))
    depth = len(history)
    if view.latest_sample is not None and depth != view.aoi:
        raise ValueError(f"input history has {depth} entries, age is {view.aoi}")
    x_hat = np.linalg.matrix_power(p.A, depth) @ z
    for q in range(1, depth + 1):
        x_hat = x_hat + np.linalg.matrix_power(p.A, q - 1) @ p.B @ history[depth - q]
    return x_hat


def expected_error_sq(aoi: int, p: SubSystemParams) -> float:
    """Expected squared norm of the prediction error at age ``aoi``."""
    if aoi < 0:
        raise ValueError(f"age must be non-negative, got {aoi}")
    total = 0.0
    power = np.eye(p.n)
    for _ in range(aoi):
        total += float(np.trace(power.T @ power @ p.W))
        power = p.A @ power
    return total


class ErrorGrowth:
    """Cached ``g(Δ)`` for one parameter set.

    Partial sums are extended on demand with incrementally built powers of
    ``A``, so repeated lookups are O(1).
    """

    def __init__(self, p: SubSystemParams):
        self.params = p
        self._sums = [0.0]
        self._power = np.eye(p.n)

    def __call__(self, aoi: int) -> float:
        sums = self._sums
        if aoi < len(sums):
            return sums[aoi]
        if aoi < 0:
            raise ValueError(f"age must be non-negative, got {aoi}")
        p = self.params
        while len(sums) <= aoi:
            term = float(np.trace(self._power.T @ self._power @ p.W))
            sums.append(sums[-1] + term)
            self._power = p.A @ self._power
        return sums[aoi]


@dataclass(frozen=True)
class ErrorSample:
    e: np.ndarray
    squared_norm: float

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.squared_norm))


def estimation_error(x_true, x_hat) -> ErrorSample:
    e = np.atleast_1d(np.asarray(x_true, dtype=float)) - np.atleast_1d(np.asarray(x_hat, dtype=float))
    return ErrorSample(e, float(e @ e))


def voi_uplink(bs_view: EstimatorView, p: SubSystemParams) -> float:
    """Expected error reduction at the base station from a fresh sample."""
    return expected_error_sq(aoi_of(bs_view), p)


def voi_downlink(x_hat_bs, x_hat_ctrl) -> float:
    d = np.atleast_1d(np.asarray(x_hat_bs, dtype=float)) - np.atleast_1d(np.asarray(x_hat_ctrl, dtype=float))
    return float(d @ d)


class RollingEstimator(EstimatorView):
    """Estimator view that keeps its current estimate up to date.

    Used by the simulator: the estimate advances one step per applied input
    and is recomputed from the history only when a newer sample arrives.
    The history never reaches further back than the latest sample.
    """

    def __init__(self, dynamics: LoopDynamics, current_step: int = 0):
        super().__init__(None, -1, deque(), current_step)
        self.dynamics = dynamics
        self.estimate = dynamics.zeros()

    def advance(self, u) -> None:
        """Record the input applied at the current step and move to the next."""
        self.input_history.append(u)
        self.current_step += 1
        self.estimate = self.dynamics.propagate(self.estimate, u)

    def receive(self, step: int, z) -> bool:
        """Incorporate sample ``x[step]``; returns False if it is not newer."""
        if step <= self.latest_step:
            return False
        if step > self.current_step:
            raise ValueError(f"sample of step {step} arrived at step {self.current_step}")
        history = self.input_history
        # keep u[step .. current_step - 1]
        for _ in range(len(history) - (self.current_step - step)):
            history.popleft()
        self.latest_sample = z
        self.latest_step = step
        x = z
        propagate = self.dynamics.propagate
        for u in history:
            x = propagate(x, u)
        self.estimate = x
        return True
