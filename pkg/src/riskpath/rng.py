"""Counter-addressed random streams.

Every random draw in the library comes from a Philox generator whose key is the
master seed and whose counter is preloaded with ``(purpose, *indices)``. Two
streams with different addresses never share counter space, so results do not
depend on the order in which streams are created or on how work is split
between threads.
"""
from __future__ import annotations

import numpy as np

# purposes occupy the top counter word
CONTROL = 1
RISK = 2
PLANT = 3
PLACEMENT = 4
TEST = 5

_MASK64 = (1 << 64) - 1


def stream(seed: int, purpose: int, *indices: int) -> np.random.Generator:
    """Return the generator addressed by ``(seed, purpose, indices)``.

    At most two indices are supported; the lowest counter word is left at zero
    and advances as draws are made.
    """
    if len(indices) > 2:
        raise ValueError("at most two stream indices are supported")
    idx = list(indices) + [0] * (2 - len(indices))
    counter = [0, idx[1] & _MASK64, idx[0] & _MASK64, purpose & _MASK64]
    key = [int(seed) & _MASK64, 0x5D1F_A0C3_9E37_79B9]
    return np.random.Generator(np.random.Philox(counter=counter, key=key))
