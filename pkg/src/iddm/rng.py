"""Seeded substreams.

Every random draw comes from a Philox (counter-based) generator keyed by
``(seed, component, *path)``. The key path is hashed by numpy's SeedSequence,
so substreams for different components, chain blocks or steps never overlap
and can be generated in any order or on any thread.
"""

from __future__ import annotations

import numpy as np

# component ids; changing these changes every seeded output
DATA = 1
INIT = 2
TRAIN = 3
SAMPLE = 4
ELBO = 5
VERIFY = 6

# chains / data points handled per substream; fixed so results do not depend on threading
BLOCK = 256


def substream(seed: int, component: int, *path: int) -> np.random.Generator:
    key = (int(component),) + tuple(int(p) for p in path)
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def blocks(n: int, size: int = BLOCK):
    """(block index, start, stop) covering range(n) in order."""
    for b, start in enumerate(range(0, n, size)):
        yield b, start, min(start + size, n)
