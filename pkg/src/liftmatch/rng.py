"""Counter-based splitmix64 generator.

Draw ``k`` of a stream seeded with ``s`` is ``mix(s + (k + 1) * GAMMA)`` where
``mix`` is the splitmix64 finalizer. Because every draw is a pure function of
``(seed, counter)``, a stream can be split by giving each consumer its own
counter range, and any implementation of the three constants below reproduces
the same corpora bit for bit.

Uniform floats take the top 53 bits: ``u = (x >> 11) * 2**-53``.
Gaussians use Box-Muller on two consecutive uniforms (first uniform shifted to
``(0, 1]``), emitting the cosine branch only.
"""

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def mix64(z):
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_seed(seed, *keys):
    """Hash a seed together with integer keys into an independent stream seed."""
    s = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    for k in keys:
        s = mix64(s ^ mix64(np.array([int(k) & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64) + GAMMA))
    return int(s[0])


class SplitMix64:
    def __init__(self, seed):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = 0

    def u64(self, n):
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        return mix64(np.uint64(self.seed) + idx * GAMMA)

    def uniform(self, low=0.0, high=1.0, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        out = low + (high - low) * u
        return float(out[0]) if size is None else out.reshape(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = self.uniform(size=(n, 2))
        r = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        z = r * np.cos(2.0 * np.pi * u[:, 1])
        out = loc + scale * z
        return float(out[0]) if size is None else out.reshape(size)

    def integers(self, low, high, size=None):
        """Integers in ``[low, high)`` (modulo reduction; bias is below 2**-40 for our ranges)."""
        n = 1 if size is None else int(np.prod(size))
        span = np.uint64(high - low)
        out = (self.u64(n) % span).astype(np.int64) + low
        return int(out[0]) if size is None else out.reshape(size)

    def permutation(self, n):
        keys = self.u64(n)
        return np.argsort(keys, kind="stable")

    def sample_without_replacement(self, n, k, rows=1):
        """``rows`` independent k-subsets of ``range(n)``, one per row."""
        keys = self.u64(rows * n).reshape(rows, n)
        order = np.argsort(keys, axis=1, kind="stable")
        return order[:, :k]
