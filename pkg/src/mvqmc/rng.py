"""Counter-based random streams.

Every draw is addressed by ``(seed, path_id, step_id, substream)``. The pair
``(step_id, substream)`` together with the seed selects a Philox key; the
path index selects a block of counters inside that keyed stream. A block of
consecutive paths is therefore one contiguous counter range, so generating
paths ``[a, b)`` in one call or in several chunks yields identical bits.

Gaussians use the inverse normal CDF (one 64-bit word per draw), which keeps
the draw-to-counter mapping fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

PARTICLE_NOISE = 0
QMCI_SHOTS = 1

_WORDS_PER_BLOCK = 4  # Philox4x64 emits four words per counter increment
_TWO_M53 = 2.0 ** -53
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class StreamKey:
    seed: int
    path_id: int = 0
    step_id: int = 0
    substream: int = 0

    def __post_init__(self):
        if not 0 <= self.seed <= _MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if min(self.path_id, self.step_id, self.substream) < 0:
            raise ValueError("path_id, step_id and substream must be non-negative")


@dataclass(frozen=True)
class NoiseDraw:
    """Wiener increments ``dw`` and iterated integrals ``i10`` for one step.

    Arrays have shape ``(m,)`` for one path or ``(n, m)`` for a block.
    """

    dw: np.ndarray
    i10: np.ndarray

    @classmethod
    def from_normals(cls, dw, zeta, h: float) -> "NoiseDraw":
        """Build from dw ~ N(0, h) and an independent zeta ~ N(0, h)."""
        dw = np.asarray(dw, dtype=float)
        zeta = np.asarray(zeta, dtype=float)
        return cls(dw=dw, i10=0.5 * h * (dw + zeta / math.sqrt(3.0)))

    def __getitem__(self, rows) -> "NoiseDraw":
        return NoiseDraw(self.dw[rows], self.i10[rows])


def _philox_key(seed: int, step_id: int, substream: int) -> np.ndarray:
    ss = np.random.SeedSequence(seed, spawn_key=(step_id, substream))
    return ss.generate_state(2, np.uint64)


def raw_block(seed: int, step_id: int, substream: int, path_start: int, n_paths: int,
              words_per_path: int) -> np.ndarray:
    """Raw 64-bit words, shape ``(n_paths, words_per_path)``.

    Path ``p`` owns counters ``[p * S, (p + 1) * S)`` with
    ``S = ceil(words_per_path / 4)``.
    """
    stride = -(-words_per_path // _WORDS_PER_BLOCK)
    bg = np.random.Philox(key=_philox_key(seed, step_id, substream), counter=path_start * stride)
    raw = bg.random_raw(n_paths * stride * _WORDS_PER_BLOCK)
    return raw.reshape(n_paths, stride * _WORDS_PER_BLOCK)[:, :words_per_path]


def _to_open_unit(raw: np.ndarray) -> np.ndarray:
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53


def uniform_block(seed, step_id, substream, path_start, n_paths, n_per_path) -> np.ndarray:
    """Uniforms on [0, 1), 53-bit resolution."""
    raw = raw_block(seed, step_id, substream, path_start, n_paths, n_per_path)
    return (raw >> np.uint64(11)).astype(np.float64) * _TWO_M53


def gaussian_block(seed, step_id, substream, path_start, n_paths, n_per_path,
                   variance: float = 1.0) -> np.ndarray:
    """N(0, variance) draws for a block of paths, shape ``(n_paths, n_per_path)``.

    Row ``r`` equals ``gaussian(StreamKey(seed, path_start + r, step_id, substream), n_per_path, variance)``.
    """
    if variance < 0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    z = ndtri(_to_open_unit(raw_block(seed, step_id, substream, path_start, n_paths, n_per_path)))
    return z * math.sqrt(variance)


def gaussian(key: StreamKey, n: int, variance: float = 1.0) -> np.ndarray:
    """``n`` i.i.d. N(0, variance) draws, a pure function of ``key``."""
    return gaussian_block(key.seed, key.step_id, key.substream, key.path_id, 1, n, variance)[0]


def uniform(key: StreamKey, n: int) -> np.ndarray:
    return uniform_block(key.seed, key.step_id, key.substream, key.path_id, 1, n)[0]


def sample_noise_block(seed: int, step_id: int, path_start: int, n_paths: int, m: int, h: float,
                       substream: int = PARTICLE_NOISE) -> NoiseDraw:
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    z = gaussian_block(seed, step_id, substream, path_start, n_paths, 2 * m, variance=h)
    return NoiseDraw.from_normals(z[:, :m], z[:, m:], h)


def sample_noise(key: StreamKey, m: int, h: float) -> NoiseDraw:
    """dw ~ N(0, h)^m and i10 = h/2 (dw + zeta/sqrt(3)) with independent zeta ~ N(0, h)^m."""
    return sample_noise_block(key.seed, key.step_id, key.path_id, 1, m, h, key.substream)[0]


def derive_seed(seed_base: int, *indices: int) -> int:
    """A 64-bit seed for a cell of a sweep; independent of how cells are enumerated."""
    state = np.random.SeedSequence(seed_base, spawn_key=tuple(indices)).generate_state(1, np.uint64)
    return int(state[0])
