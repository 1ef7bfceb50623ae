"""Counter-based random streams addressed by (root seed, integer path).

Philox keyed through ``SeedSequence(entropy=seed, spawn_key=path)`` gives
every (seed, path) pair its own independent stream. Streams never depend on
draw order elsewhere in the program, so adding a new consumer cannot
perturb existing draws. The same (seed, path) always replays bitwise.
"""

from __future__ import annotations

import numpy as np


def stream(seed, *path):
    """Return a Generator for the stream addressed by ``(seed, *path)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def uniform_init(rng, shape, fan_in):
    """U(-1/sqrt(fan_in), +1/sqrt(fan_in)) init used for all weights."""
    bound = 1.0 / np.sqrt(float(fan_in))
    return rng.uniform(-bound, bound, size=shape)
