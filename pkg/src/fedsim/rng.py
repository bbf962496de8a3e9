"""Counter-based random streams.

Every random decision in the simulator draws from a Philox generator keyed
by ``(seed, purpose, a, b)``.  Streams are therefore independent of each
other and of evaluation order: client 7's round-3 shuffle is the same bits
whether clients run sequentially, threaded, or in any order.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Purpose tags for the second key word.  Keep values stable: they are part
# of the reproducibility contract (checkpoints cite seeds, not streams, so
# changing a tag silently changes every experiment).
INIT = 1
CLIENT_SELECT = 2
CLIENT_TRAIN = 3
PARTITION_POOL = 4
PARTITION_CLIENT = 5
UNKNOWN_CACHE = 6
GAN = 7
SYNTH = 8
CENTRAL = 9
SPLIT = 10
REPORT = 11


def stream(seed: int, purpose: int, a: int = 0, b: int = 0) -> np.random.Generator:
    """Deterministic generator for ``(seed, purpose, a, b)``.

    ``a`` and ``b`` must fit in 24 bits each (rounds, client ids, classes
    and epoch counters all do at any plausible scale).
    """
    if not 0 <= purpose < 1 << 16:
        raise ValueError(f"purpose tag out of range: {purpose}")
    if not 0 <= a < 1 << 24:
        raise ValueError(f"stream index a out of range: {a}")
    if not 0 <= b < 1 << 24:
        raise ValueError(f"stream index b out of range: {b}")
    key = np.array(
        [seed & _MASK64, (purpose << 48) | (a << 24) | b],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))
