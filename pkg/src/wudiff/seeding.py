"""Deterministic seed derivation.

Every random choice in the library flows from one root seed, namespaced
per component so that e.g. changing the shuffle setting cannot perturb
the fold split.
"""

import numpy as np

FOLD_NS = 1
VALIDATION_NS = 2
INIT_NS = 3
SHUFFLE_NS = 4
TRAIN_NS = 5


def spawn_rng(root_seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(root_seed),) + tuple(int(p) for p in path)))


def subseed(root_seed: int, *path: int) -> int:
    """A derived integer seed, for handing to components that reseed themselves."""
    ss = np.random.SeedSequence((int(root_seed),) + tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0] & 0x7FFFFFFF)
