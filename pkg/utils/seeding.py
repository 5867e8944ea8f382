# utils/seeding.py

import numpy as np


def derive_seed(base_seed: int, *counter: int) -> int:
    """
    Child seed for position ``counter`` under ``base_seed``.

    Depends only on (base_seed, counter), never on the order in which
    children are requested, so serial and pooled runs draw the same
    instances.
    """
    sequence = np.random.SeedSequence(entropy=int(base_seed), spawn_key=tuple(int(c) for c in counter))
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def rng_for(base_seed: int, *counter: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base_seed, *counter))
