"""Seeded random streams.

Everything random in the toolkit descends from one integer seed. Named
sub-streams (``"split"``, ``"init"``, ``"shuffle"``...) are derived with
splitmix64 so that adding a consumer never perturbs another one.
"""

import hashlib

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(state):
    """One splitmix64 step. Returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed):
        self.state = int(seed) & _MASK

    def next_u64(self):
        self.state, out = splitmix64(self.state)
        return out

    def uniform(self, size):
        """Doubles in [0, 1) built from the top 53 bits of each output."""
        n = int(np.prod(size)) if np.ndim(size) else int(size)
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = (self.next_u64() >> 11) * (1.0 / (1 << 53))
        return out.reshape(size)


def derive_seed(seed, name):
    """Stable 64-bit seed for the sub-stream ``name`` of ``seed``."""
    digest = hashlib.blake2b(name.encode(), digest_size=8).digest()
    _, out = splitmix64((int(seed) & _MASK) ^ int.from_bytes(digest, "little"))
    return out


def substream(seed, name):
    """numpy Generator for a named sub-stream."""
    return np.random.default_rng(derive_seed(seed, name))
