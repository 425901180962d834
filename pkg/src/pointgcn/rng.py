"""Counter-based random numbers.

Every draw is a pure function of its integer key tuple, e.g.
``(seed, layer, point, column)``, so results do not depend on iteration
order, chunking or thread count. The mixer is the SplitMix64 finalizer.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _as_u64(value):
    if isinstance(value, (int, np.integer)):
        return np.asarray(int(value) & _MASK, dtype=np.uint64)
    arr = np.asarray(value)
    return arr.astype(np.int64, copy=False).view(np.uint64) if arr.dtype != np.uint64 else arr


def counter_hash(*keys):
    """Hash integer keys (scalars or broadcastable arrays) to uint64."""
    with np.errstate(over="ignore"):
        h = np.asarray(_GOLDEN, dtype=np.uint64)
        for key in keys:
            h = _mix64(h ^ (_as_u64(key) + _GOLDEN))
    return h


def counter_uniform(*keys):
    """Uniform doubles in [0, 1) keyed by ``keys``."""
    return (counter_hash(*keys) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def derive_seed(*keys):
    """Collapse a key tuple into a single non-negative Python int seed."""
    return int(counter_hash(*keys)) & 0x7FFF_FFFF_FFFF_FFFF
