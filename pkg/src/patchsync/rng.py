"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by the
user seed plus a tuple of integers identifying the call site (stage, patch
index, ...). Streams therefore do not depend on execution order.
"""
import numpy as np

# stage keys
PARTITION = 1
SPARSIFY = 2
EXPAND = 3
EMBED = 4
SYNTH = 5
EVAL = 6
ALIGN = 7
TEMPORAL = 8


def generator(seed, *keys):
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError("seed and stream keys must be non-negative")
    ss = np.random.SeedSequence([int(seed), *(int(k) for k in keys)])
    return np.random.Generator(np.random.Philox(ss))
