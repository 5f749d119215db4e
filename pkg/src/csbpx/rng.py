"""Counter-based random numbers.

Each draw is a pure function of ``(seed, stream, path, step, slot)``: a
splitmix64 finaliser is chained over the counters, so any path can be
replayed in isolation and results do not depend on how paths are batched
or scheduled across threads.
"""

import numpy as np
from scipy import special

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_S30, _S27, _S31, _S11 = (np.uint64(k) for k in (30, 27, 31, 11))


def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _hash(seed, stream, path, step, slot):
    with np.errstate(over="ignore"):
        z = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
        z = _mix(z ^ (np.uint64(stream) * _GOLDEN))
        z = _mix(z + np.asarray(path, dtype=np.uint64) * _GOLDEN)
        z = _mix(z ^ (np.uint64(step) * _M1))
        return _mix(z + np.uint64(slot) * _M2)


class CounterRNG:
    """Uniform and normal variates keyed by counters.

    ``uniform(paths, step, slot)`` returns one value in (0, 1) per path id.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)

    def uniform(self, paths, step, slot):
        h = _hash(self.seed, self.stream, paths, step, slot)
        return ((h >> _S11).astype(np.float64) + 0.5) * 2.0**-53

    def normal(self, paths, step, slot):
        return special.ndtri(self.uniform(paths, step, slot))
