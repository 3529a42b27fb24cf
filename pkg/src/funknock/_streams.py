"""Deterministic RNG streams derived from one seed by a splittable scheme."""

import numpy as np


def rng_stream(seed, *key):
    """Return a Generator on a counter-based bit generator for (seed, key).

    Distinct keys give statistically independent streams; the same
    (seed, key) pair always reproduces the same stream, independent of
    how many other streams were drawn from.

    Parameters
    ----------
    seed : int
        Master seed.
    *key : int
        Path of the stream below the master seed, e.g. a replicate
        index followed by a stage index.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed, *key):
    """Return a plain integer sub-seed for (seed, key).

    Used where an operation takes a scalar seed rather than a Generator,
    e.g. handing each replicate its own master seed.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
