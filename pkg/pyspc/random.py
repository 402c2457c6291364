"""Counter-based random streams.

All stochastic draws in pyspc come from numpy `Generator` objects backed by the
Philox counter-based bit generator. A stream is identified by the user seed plus a
tuple of integer keys (e.g. cell and trial index), so results do not depend on
the order in which work is scheduled or on the number of workers.
"""

import numpy as np


def make_rng(seed=None, *keys):
    """Return a `numpy.random.Generator` for `seed` and optional integer stream keys.

    Parameters
    ----------
    seed : int, `numpy.random.SeedSequence`, `numpy.random.Generator` or None
        A `Generator` is returned unchanged (keys must then be empty).
    keys : int
        Stream identifiers appended to the seed sequence's spawn key.
    """
    if isinstance(seed, np.random.Generator):
        if keys:
            raise ValueError("Stream keys cannot be applied to an existing Generator.")
        return seed

    if isinstance(seed, np.random.SeedSequence):
        ss = np.random.SeedSequence(
            seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(int(k) for k in keys)
        )
    else:
        ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
