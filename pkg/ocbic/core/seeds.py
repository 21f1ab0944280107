"""Seed derivation shared by every stochastic engine.

All randomness flows from a single integer seed. Independent streams are
derived with `numpy.random.SeedSequence` spawn keys, so a result depends only
on (seed, keys) and never on evaluation order or worker count.
"""

import numpy as np


def derive_seed(seed: int, *keys: int) -> int:
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def generator(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in keys)))
