"""Reproducible Wiener increments for the two truncated noise channels.

Streams are counter-based (Philox) and keyed by (master_seed, path_index,
stream tag), so the increments for a given (seed, path, step) are a pure
function of those values: any execution order, batching, or thread layout
reproduces them bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox

W1_TAG = 1
W2_TAG = 2
_BRIDGE_BASE = 8  # bridge streams: tag encodes (channel, refinement level)


@dataclass(frozen=True)
class SeedSpec:
    """Addresses one sample path of the pair of Wiener processes."""

    master_seed: int
    path_index: int = 0
    w1_tag: int = W1_TAG
    w2_tag: int = W2_TAG


@dataclass(frozen=True)
class NoiseIncrement:
    dW1: np.ndarray
    dW2: np.ndarray
    dt: float


def _generator(master_seed: int, path_index: int, tag: int) -> Generator:
    key = [np.uint64(master_seed & (2**64 - 1)), np.uint64(((tag & 0xFFFF) << 48) ^ (path_index & (2**48 - 1)))]
    return Generator(Philox(key=key))


def _block(master_seed: int, path_index: int, tag: int, n_steps: int, m: int, dt: float) -> np.ndarray:
    if m == 0 or n_steps == 0:
        return np.zeros((n_steps, m))
    g = _generator(master_seed, path_index, tag)
    return g.standard_normal((n_steps, m)) * np.sqrt(dt)


def path_increments(spec: SeedSpec, n_steps: int, dt: float, m1: int, m2: int) -> tuple[np.ndarray, np.ndarray]:
    """All increments of one path: arrays of shape (n_steps, m1) and (n_steps, m2)."""
    if dt <= 0:
        raise ValueError(f"dt must be > 0; got {dt}")
    dw1 = _block(spec.master_seed, spec.path_index, spec.w1_tag, n_steps, m1, dt)
    dw2 = _block(spec.master_seed, spec.path_index, spec.w2_tag, n_steps, m2, dt)
    return dw1, dw2


def increments(spec: SeedSpec, step: int, dt: float, m1: int, m2: int) -> NoiseIncrement:
    """Increments of step `step`; row `step` of the path's stream."""
    if step < 0:
        raise ValueError(f"step must be >= 0; got {step}")
    dw1, dw2 = path_increments(spec, step + 1, dt, m1, m2)
    return NoiseIncrement(dW1=dw1[step], dW2=dw2[step], dt=dt)


def brownian_bridge_refine(
    block: np.ndarray, dt: float, spec: SeedSpec, channel: int = W1_TAG, level: int = 0
) -> np.ndarray:
    """Refine a block of increments at dt into one at dt/2 on the same path.

    The two fine increments of each coarse step sum to the coarse increment
    exactly; the bridge midpoint noise comes from its own stream keyed by
    (channel, level), so repeated refinement is reproducible.
    """
    block = np.asarray(block, dtype=float)
    if block.ndim != 2:
        raise ValueError("block must have shape (n_steps, m)")
    n_steps, m = block.shape
    tag = _BRIDGE_BASE + 8 * int(level) + int(channel)
    if m == 0 or n_steps == 0:
        return np.zeros((2 * n_steps, m))
    g = _generator(spec.master_seed, spec.path_index, tag)
    z = g.standard_normal((n_steps, m)) * np.sqrt(dt / 4.0)
    fine = np.empty((2 * n_steps, m))
    fine[0::2] = block / 2.0 + z
    fine[1::2] = block / 2.0 - z
    return fine


def coarsen(block: np.ndarray) -> np.ndarray:
    """Pairwise sums: inverse of refinement on the increment level."""
    block = np.asarray(block, dtype=float)
    if block.shape[0] % 2 != 0:
        raise ValueError("block length must be even to coarsen")
    return block[0::2] + block[1::2]
