"""Counter-style random streams.

Every stream is a Philox generator keyed by ``(seed, *key)`` through
:class:`numpy.random.SeedSequence`, so a block of samples depends only on its
key and never on which worker drew it or in what order.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

#: samples per independently keyed block
BLOCK = 1 << 15


def stream(seed, *key):
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def blocks(n, block=BLOCK):
    """``(index, size)`` pairs covering ``n`` samples."""
    return [(i, min(block, n - i * block)) for i in range(-(-n // block))]


def parallel_map(fn, items, workers=None):
    """Ordered map, threaded when ``workers > 1``."""
    items = list(items)
    if not workers or workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(workers) as ex:
        return list(ex.map(fn, items))
