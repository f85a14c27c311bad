"""splitmix64 pseudo-random stream.

splitmix64 advances its state by a fixed odd constant and mixes the result,
so the k-th output depends only on ``state + k * GAMMA``. That lets whole
blocks of outputs be produced with vectorised uint64 arithmetic while staying
bit-identical to the scalar reference.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z = (z ^ (z >> 30)) * _M1 & MASK64
    z = (z ^ (z >> 27)) * _M2 & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def derive_seed(root: int, tag: str) -> int:
    """Seed for an independent substream: blake2b(root, tag) folded to 64 bits."""
    digest = hashlib.blake2b(
        int(root & MASK64).to_bytes(8, "little") + tag.encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    @classmethod
    def substream(cls, root: int, tag: str) -> "SplitMix64":
        return cls(derive_seed(root, tag))

    def spawn(self, tag: str) -> "SplitMix64":
        return SplitMix64(derive_seed(self.next_u64(), tag))

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def u64_array(self, n: int) -> np.ndarray:
        """The next ``n`` outputs, identical to ``n`` calls of :meth:`next_u64`."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GAMMA)
            z = steps + np.uint64(self.state)
            out = _mix64_array(z)
        self.state = (self.state + n * GAMMA) & MASK64
        return out

    def random(self, n: int) -> np.ndarray:
        """``n`` float64 uniforms on [0, 1) built from the top 53 bits."""
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def normal(self, n: int) -> np.ndarray:
        """``n`` standard normals via Box-Muller on consecutive uniform pairs."""
        pairs = (n + 1) // 2
        u = self.random(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = radius * np.cos(theta)
        out[1::2] = radius * np.sin(theta)
        return out[:n]

    def randbelow(self, bound: int) -> int:
        """Integer in [0, bound) by the multiply-high method."""
        if bound < 1:
            raise ValueError("bound must be >= 1")
        return (self.next_u64() * bound) >> 64

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return np.asarray(perm, dtype=np.int64)
