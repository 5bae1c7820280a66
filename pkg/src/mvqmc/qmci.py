"""Classical emulation of maximum-likelihood amplitude estimation.

For each Grover power j the emulator draws ``n_shot`` Bernoulli outcomes with
success probability sin^2((2j + 1) theta) where sin^2(theta) = mu, then
returns the maximum-likelihood theta over [0, pi/2].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from . import rng
from .rng import StreamKey

GRID_POINTS = 2**17
HALF_PI = 0.5 * math.pi


@dataclass(frozen=True)
class GroverSchedule:
    M_G: int
    n_shot: int

    def __post_init__(self):
        if self.M_G < 0:
            raise ValueError(f"M_G must be non-negative, got {self.M_G}")
        if self.n_shot < 0:
            raise ValueError(f"n_shot must be non-negative, got {self.n_shot}")

    @property
    def powers(self) -> np.ndarray:
        """{0, 1, 2, 4, ..., 2**M_G}; 0 and 2**0 both appear."""
        return np.concatenate(([0], 2 ** np.arange(self.M_G + 1))).astype(np.int64)

    @property
    def N_G(self) -> int:
        return 2**self.M_G

    def oracle_calls_per_run(self) -> int:
        """n_shot * sum_j (2j + 1) = n_shot * (2**(M_G + 2) + M_G)."""
        return self.n_shot * (2 ** (self.M_G + 2) + self.M_G)


@dataclass(frozen=True)
class QmciOutcome:
    estimate: float
    theta_hat: float
    counts: np.ndarray  # (len(powers), 2): columns n0, n1
    grover_applications: int

    def to_json(self) -> dict:
        return {
            "estimate": self.estimate,
            "theta_hat": self.theta_hat,
            "counts": self.counts.tolist(),
            "grover_applications": self.grover_applications,
        }


def grover_query_count(schedule: GroverSchedule, depth: int) -> int:
    """Oracle queries for one QMCI run on a state built from ``depth`` one-step circuits."""
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    return depth * schedule.oracle_calls_per_run()


@lru_cache(maxsize=4)
def _log_tables(M_G: int):
    theta = np.linspace(0.0, HALF_PI, GRID_POINTS)
    mult = (2 * GroverSchedule(M_G, 1).powers + 1).astype(float)
    arg = mult[:, None] * theta[None, :]
    with np.errstate(divide="ignore"):
        log_sin2 = np.log(np.sin(arg) ** 2)
        log_cos2 = np.log(np.cos(arg) ** 2)
    for a in (theta, log_sin2, log_cos2):
        a.setflags(write=False)
    return theta, log_sin2, log_cos2


def log_likelihood(theta: float, counts, schedule: GroverSchedule) -> float:
    """sum_j n1_j log sin^2((2j+1) theta) + n0_j log cos^2((2j+1) theta); -inf at exact zeros."""
    counts = np.asarray(counts)
    mult = 2 * schedule.powers + 1
    total = 0.0
    for c, (n0, n1) in zip(mult, counts):
        for n, p in ((n1, math.sin(c * theta) ** 2), (n0, math.cos(c * theta) ** 2)):
            if n:
                if p == 0.0:
                    return -math.inf
                total += n * math.log(p)
    return total


def _check_counts(counts, schedule):
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (schedule.M_G + 2, 2):
        raise ValueError(f"counts must have shape {(schedule.M_G + 2, 2)}, got {counts.shape}")
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    if schedule.n_shot < 1 or counts.sum() == 0:
        raise ValueError("no measurement outcomes (n_shot = 0)")
    if np.any(counts.sum(axis=1) != schedule.n_shot):
        raise ValueError("each row of counts must sum to n_shot")
    return counts


def mle_argmax(counts, schedule: GroverSchedule) -> float:
    """Global maximiser of the likelihood over [0, pi/2].

    Dense grid of 2**17 points, then bounded Brent refinement inside the best
    grid cell. Ties go to the smaller theta.
    """
    counts = _check_counts(counts, schedule)
    theta, log_sin2, log_cos2 = _log_tables(schedule.M_G)
    ll = np.zeros(GRID_POINTS)
    n0, n1 = counts[:, 0], counts[:, 1]
    # rows with a zero count are skipped so that 0 * -inf never appears
    if np.any(n1):
        ll += n1[n1 > 0] @ log_sin2[n1 > 0]
    if np.any(n0):
        ll += n0[n0 > 0] @ log_cos2[n0 > 0]
    g = int(np.argmax(ll))
    best_theta, best_ll = float(theta[g]), float(ll[g])
    lo = float(theta[max(g - 1, 0)])
    hi = float(theta[min(g + 1, GRID_POINTS - 1)])
    res = minimize_scalar(lambda th: -log_likelihood(th, counts, schedule),
                          bounds=(lo, hi), method="bounded", options={"xatol": 1e-11})
    if res.success and np.isfinite(res.fun):
        cand_ll = -float(res.fun)
        if cand_ll > best_ll:
            best_theta, best_ll = float(res.x), cand_ll
    return min(max(best_theta, 0.0), HALF_PI)


def sample_counts(mu: float, schedule: GroverSchedule, key: StreamKey) -> np.ndarray:
    """Bernoulli shot counts (n0, n1) for each Grover power."""
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu must lie in [0, 1], got {mu}")
    theta_mu = math.asin(math.sqrt(mu))
    probs = np.sin((2 * schedule.powers + 1) * theta_mu) ** 2
    u = rng.uniform(key, schedule.n_shot * len(probs)).reshape(len(probs), schedule.n_shot)
    n1 = (u < probs[:, None]).sum(axis=1)
    return np.stack([schedule.n_shot - n1, n1], axis=1).astype(np.int64)


def qmciml(mu: float, schedule: GroverSchedule, key: StreamKey) -> QmciOutcome:
    """Sampled output of MLE amplitude estimation for the true mean ``mu``."""
    if schedule.n_shot < 1:
        raise ValueError("n_shot must be >= 1")
    counts = sample_counts(mu, schedule, key)
    theta_hat = mle_argmax(counts, schedule)
    return QmciOutcome(math.sin(theta_hat) ** 2, theta_hat, counts, schedule.oracle_calls_per_run())


def clip_and_rescale(value, u: float, l: float):
    """(clamp(value, l, u) - l) / (u - l), mapping [l, u] onto [0, 1]."""
    if not u > l:
        raise ValueError(f"upper bound {u} must exceed lower bound {l}")
    return (np.clip(value, l, u) - l) / (u - l)


def rescale(est, u: float, l: float):
    if not u > l:
        raise ValueError(f"upper bound {u} must exceed lower bound {l}")
    return est * (u - l) + l
