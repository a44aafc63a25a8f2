"""Counter-based, order-independent random streams.

Every (seed, trajectory index, stream id) triple maps to its own Philox
generator through ``SeedSequence`` spawn keys, so a trajectory draws the
same numbers no matter which worker runs it or in what order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError

# Stream ids 0..K-1 are the Wiener increments of channel k; jump models use
# stream 0 for their uniforms. Ensemble-level draws use a separate entropy tag.
_ENSEMBLE_TAG = 0x5EED0001


def check_seed(seed) -> int:
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise PreconditionError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def stream(seed: int, trajectory_index: int, stream_id: int = 0) -> np.random.Generator:
    """Independent generator for one (trajectory, stream) pair."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(int(trajectory_index), int(stream_id)))
    return np.random.Generator(np.random.Philox(ss))


def ensemble_generator(seed: int, purpose: int = 0) -> np.random.Generator:
    """Generator for ensemble-wide draws (stratification offsets, bootstrap)."""
    ss = np.random.SeedSequence([check_seed(seed), _ENSEMBLE_TAG, int(purpose)])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class NoiseRealization:
    """Wiener increments dW_k ~ Normal(0, dt) of one trajectory.

    ``increments(steps)`` is a pure function of the dataclass fields and
    ``steps``; the per-channel streams are independent of the channel count.
    """

    seed: int
    trajectory_index: int
    n_channels: int
    dt: float

    def increments(self, steps: int) -> np.ndarray:
        out = np.empty((steps, self.n_channels))
        scale = np.sqrt(self.dt)
        for k in range(self.n_channels):
            out[:, k] = stream(self.seed, self.trajectory_index, k).standard_normal(steps) * scale
        return out


class BlockNoise:
    """Chunked Wiener increments for a contiguous block of trajectories.

    Draws are taken sequentially from each trajectory's own streams, so the
    values do not depend on the chunk length or on the block composition.
    """

    def __init__(self, seed: int, indices, n_channels: int, dt: float):
        self.scale = np.sqrt(dt)
        self.n_channels = n_channels
        self._gens = [[stream(seed, i, k) for k in range(n_channels)] for i in indices]

    def draw(self, steps: int) -> np.ndarray:
        """Return an array of shape (steps, block size, n_channels)."""
        out = np.empty((steps, len(self._gens), self.n_channels))
        for b, gens in enumerate(self._gens):
            for k, g in enumerate(gens):
                out[:, b, k] = g.standard_normal(steps)
        out *= self.scale
        return out


class BlockUniforms:
    """Per-trajectory uniforms in [0, 1) for jump unravellings."""

    def __init__(self, seed: int, indices, width: int):
        self.width = width
        self._gens = [stream(seed, i, 0) for i in indices]

    def draw(self, steps: int) -> np.ndarray:
        out = np.empty((steps, len(self._gens), self.width))
        for b, g in enumerate(self._gens):
            out[:, b, :] = g.random((steps, self.width))
        return out
