"""Two-stage time grid and the piecewise constant/linear gamma extrapolant."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_REL_TOL = 1e-9


def _as_count(ratio: float, what: str) -> int:
    n = round(ratio)
    if n < 1 or abs(ratio - n) > _REL_TOL * max(1.0, abs(ratio)):
        raise ValueError(f"{what} = {ratio!r} is not a positive integer")
    return int(n)


def ceil_tol(x: float) -> int:
    """ceil(x) that ignores floating-point excess below 1e-9 relative."""
    n = round(x)
    if abs(x - n) <= _REL_TOL * max(1.0, abs(x)):
        return int(n)
    return math.ceil(x)


def repair_steps(T: float, h_I: float, h_II: float) -> tuple:
    """Shrink (h_I, h_II) to the nearest admissible pair.

    h_II -> T / max(ceil(T / h_II), 2), then h_I -> h_II / ceil(h_II / h_I).
    """
    if not (T > 0 and h_I > 0 and h_II > 0):
        raise ValueError("T, h_I and h_II must be positive")
    h_II_new = T / max(ceil_tol(T / h_II), 2)
    h_I_new = h_II_new / ceil_tol(h_II_new / h_I)
    return h_I_new, h_II_new


@dataclass(frozen=True)
class StepSchedule:
    T: float
    h_I: float
    h_II: float
    n_t_I: int
    n_t_II: int
    grid: np.ndarray
    steps: np.ndarray

    @property
    def n_t(self) -> int:
        return self.n_t_I + self.n_t_II


def build_schedule(T: float, h_I: float, h_II: float) -> StepSchedule:
    """t_i = i h_I up to i = n_t_I, then t_i = (i - n_t_I + 1) h_II up to T.

    ``n_t_I = h_II / h_I`` and ``n_t_II = T / h_II - 1`` must be integers.
    """
    if not (T > 0 and h_I > 0 and h_II > 0):
        raise ValueError("T, h_I and h_II must be positive")
    try:
        n_I = _as_count(h_II / h_I, "h_II / h_I")
        n_II = _as_count(T / h_II - 1.0, "T / h_II - 1")
    except ValueError as exc:
        hi, hii = repair_steps(T, h_I, h_II)
        raise ValueError(f"{exc}; nearest admissible values: h_I={hi!r}, h_II={hii!r}") from None
    n_t = n_I + n_II
    i = np.arange(n_t + 1)
    grid = np.where(i <= n_I, i * h_I, (i - n_I + 1) * h_II)
    grid[-1] = T
    steps = np.where(np.arange(n_t) < n_I, h_I, h_II)
    grid.setflags(write=False)
    steps.setflags(write=False)
    return StepSchedule(T, h_I, h_II, n_I, n_II, grid, steps)


class GammaHistory:
    """Append-only estimates gamma_hat[i, k]; slopes derive from them on demand."""

    def __init__(self, K: int, schedule: StepSchedule):
        self.K = K
        self.schedule = schedule
        self._rows: list = []

    @property
    def estimates(self) -> np.ndarray:
        return np.array(self._rows, dtype=float).reshape(len(self._rows), self.K)

    def __len__(self):
        return len(self._rows)

    def append(self, row) -> None:
        row = np.asarray(row, dtype=float).reshape(self.K)
        if len(self._rows) > self.schedule.n_t:
            raise IndexError("history already holds every grid point")
        if not np.all(np.isfinite(row)):
            raise ValueError("gamma estimates must be finite")
        self._rows.append(row.copy())

    def slope(self, j: int) -> np.ndarray:
        """gamma_hat'[j, :] under the three-case rule."""
        if not 0 <= j < len(self._rows):
            raise IndexError(f"estimates not filled through row {j}")
        s = self.schedule
        if j < s.n_t_I:
            return np.zeros(self.K)
        prev = self._rows[0] if j == s.n_t_I else self._rows[j - 1]
        return (self._rows[j] - prev) / s.h_II

    @property
    def slopes(self) -> np.ndarray:
        return np.array([self.slope(j) for j in range(len(self._rows))]).reshape(len(self._rows), self.K)

    def segment(self, i: int, t: float) -> int:
        """Index j with t in [t_j, t_{j+1}), the last segment [t_i, t_{i+1}] closed."""
        grid = self.schedule.grid
        if not 0 <= i < self.schedule.n_t:
            raise IndexError(f"step index {i} outside [0, {self.schedule.n_t})")
        tol = 1e-12 * max(1.0, self.schedule.T)
        if t < -tol or t > grid[i + 1] + tol:
            raise ValueError(f"t={t} outside [0, {grid[i + 1]}]")
        j = int(np.searchsorted(grid[: i + 1], t, side="right")) - 1
        return min(max(j, 0), i)

    def tilde(self, i: int, t: float) -> np.ndarray:
        """The extrapolant gamma_tilde_i(t) for all k at once."""
        j = self.segment(i, t)
        if j >= len(self._rows):
            raise IndexError(f"estimates not filled through row {j}")
        return self.slope(j) * (t - self.schedule.grid[j]) + self._rows[j]


def slope_at(history: GammaHistory, k: int, j: int, schedule: StepSchedule | None = None) -> float:
    if schedule is not None and schedule is not history.schedule:
        raise ValueError("schedule does not belong to this history")
    return float(history.slope(j)[k])


def extrapolate(history: GammaHistory, i: int, k: int, t: float, schedule: StepSchedule | None = None) -> float:
    if schedule is not None and schedule is not history.schedule:
        raise ValueError("schedule does not belong to this history")
    return float(history.tilde(i, t)[k])
