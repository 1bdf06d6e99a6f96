"""Partition-independent Gaussian streams.

Paths are grouped in fixed blocks of ``BLOCK_SIZE``; every block owns a Philox
stream keyed by ``(seed..., block)``. Drawing paths ``[start, stop)`` materializes
the covering blocks and slices them, so path ``m`` gets the same numbers whatever
chunking the caller uses.
"""

from __future__ import annotations

import numpy as np

BLOCK_SIZE = 1024

TRAIN_STREAM = 1
EVAL_STREAM = 2
VALIDATION_STREAM = 3
NOISE_STREAM = 4


def as_entropy(seed) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def block_generator(seed, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=list(as_entropy(seed)), spawn_key=(int(block),))
    return np.random.Generator(np.random.Philox(ss))


def generator(seed) -> np.random.Generator:
    """Stand-alone stream (optimizer noise, lattice sampling inside one block)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(as_entropy(seed)))))


def normals(seed, start: int, stop: int, n_steps: int, dim: int = 1) -> np.ndarray:
    """Standard normals of shape ``(dim, stop - start, n_steps)`` for paths ``[start, stop)``.

    Factor-major layout: factor 0 of a ``dim``-factor draw equals the draw of a
    one-factor model with the same seed.
    """
    if stop <= start:
        return np.empty((dim, 0, n_steps))
    first, last = start // BLOCK_SIZE, (stop - 1) // BLOCK_SIZE
    out = np.empty((dim, (last - first + 1) * BLOCK_SIZE, n_steps))
    for i, b in enumerate(range(first, last + 1)):
        sl = slice(i * BLOCK_SIZE, (i + 1) * BLOCK_SIZE)
        out[:, sl, :] = block_generator(seed, b).standard_normal((dim, BLOCK_SIZE, n_steps))
    offset = start - first * BLOCK_SIZE
    return out[:, offset:offset + stop - start, :]


def uniforms(seed, start: int, stop: int, n_steps: int) -> np.ndarray:
    """Uniforms of shape ``(stop - start, n_steps)``, same block discipline as :func:`normals`."""
    if stop <= start:
        return np.empty((0, n_steps))
    first, last = start // BLOCK_SIZE, (stop - 1) // BLOCK_SIZE
    out = np.empty(((last - first + 1) * BLOCK_SIZE, n_steps))
    for i, b in enumerate(range(first, last + 1)):
        out[i * BLOCK_SIZE:(i + 1) * BLOCK_SIZE] = block_generator(seed, b).random((BLOCK_SIZE, n_steps))
    offset = start - first * BLOCK_SIZE
    return out[offset:offset + stop - start]
