"""Counter-based random streams.

Streams are addressed by a tuple of small integers appended to the root seed's
spawn key, so the stream for ``(tag, k)`` does not depend on how many other
streams were drawn before it.
"""

from __future__ import annotations

import numpy as np

# first element of every spawn key; keeps streams of different modules apart
DESIGN = 1
SPLIT = 2
SIM = 3
RESAMPLE = 4


def root_seed(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if seed is None:
        return np.random.SeedSequence()
    return np.random.SeedSequence(int(seed))


def child_seed(seed, *keys: int) -> np.random.SeedSequence:
    root = root_seed(seed)
    return np.random.SeedSequence(root.entropy, spawn_key=tuple(root.spawn_key) + tuple(int(k) for k in keys))


def stream(seed, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(child_seed(seed, *keys)))
