"""Counter-based random streams.

Every draw in a simulation comes from a generator keyed by
``(seed, purpose, *indices)``. Adding a device or a round therefore never
shifts the draws of any other (purpose, round, device) triple.
"""

from __future__ import annotations

import numpy as np

# Stable small integers; append only, never renumber.
PURPOSES = {
    "tags": 1,
    "adversary": 2,
    "shard": 3,
    "task_model": 4,
    "device_data": 5,
    "flip": 6,
    "participation": 7,
    "free_rider": 8,
    "test_data": 9,
    "feature_shard": 10,
}


def stream(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(PURPOSES[purpose], *map(int, keys)))
    return np.random.Generator(np.random.PCG64(ss))
