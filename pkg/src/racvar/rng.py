"""Seed streams for reproducible replications.

Every random draw in the package is keyed by a tuple of non-negative
integers: ``(master_seed, replication, stage, purpose, ...)``.  Keys are fed
to :class:`numpy.random.SeedSequence` as entropy, so two different key tuples
give statistically independent streams and identical tuples give bit-identical
draws.
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

Seed = Union[int, Sequence[int], np.random.SeedSequence]

# purpose tags used as the last element of a stream key
SAMPLE = 0
LOSS_NOISE = 1
CROSS_VALIDATION = 2
EVALUATION = 3
REFERENCE = 4


def _as_key(seed: Seed) -> list[int]:
    if isinstance(seed, np.random.SeedSequence):
        entropy = seed.entropy
        key = list(entropy) if isinstance(entropy, (list, tuple)) else [int(entropy)]
        return key + list(seed.spawn_key)
    if isinstance(seed, (int, np.integer)):
        return [int(seed)]
    return [int(s) for s in seed]


def stream(seed: Seed, *keys: int) -> np.random.SeedSequence:
    """Seed sequence for the sub-stream ``seed`` extended by ``keys``.

    Sub-keys are stored shifted by one: SeedSequence pads its entropy with
    zeros, so a literal trailing 0 would alias the parent stream.
    """
    if any(int(k) < 0 for k in keys):
        raise ValueError(f"stream keys must be non-negative, got {keys}")
    key = _as_key(seed) + [int(k) + 1 for k in keys]
    if any(k < 0 for k in key):
        raise ValueError(f"seed keys must be non-negative, got {key}")
    return np.random.SeedSequence(key)


def generator(seed: Seed, *keys: int) -> np.random.Generator:
    return np.random.default_rng(stream(seed, *keys))


def key_of(seed: Seed) -> tuple[int, ...]:
    """Hashable record of a seed (stored alongside sample batches)."""
    return tuple(_as_key(seed))
