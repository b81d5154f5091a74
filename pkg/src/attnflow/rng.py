"""Counter-based SplitMix64 stream.

The algorithm is fixed so that streams can be reproduced bit-for-bit in
other languages:

* raw output ``i`` (0-based) of a generator seeded with ``s`` is
  ``mix64(s + (i + 1) * 0x9E3779B97F4A7C15 mod 2^64)`` where ``mix64`` is the
  SplitMix64 finalizer (shifts 30/27/31, multipliers 0xBF58476D1CE4E5B9 and
  0x94D049BB133111EB);
* a uniform double is ``(raw >> 11) * 2^-53`` in ``[0, 1)``;
* normals come in pairs from consecutive uniforms ``(u1, u2)``:
  ``r = sqrt(-2 ln(1 - u1))``, emitted as ``r cos(2 pi u2)`` then
  ``r sin(2 pi u2)``. An odd request discards the trailing sine value.
* sub-stream seeds are ``derive_seed(seed, *ids)``, folding each id in with
  ``s = mix64((s xor id) + gamma)``.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *ids: int) -> int:
    s = seed & MASK64
    for i in ids:
        s = mix64((s ^ (int(i) & MASK64)) + GAMMA)
    return s


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Deterministic 64-bit generator; see module docstring for the algorithm."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def raw(self, count: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + 1 + count, dtype=np.uint64)
        self.counter += count
        with np.errstate(over="ignore"):
            state = np.uint64(self.seed) + idx * np.uint64(GAMMA)
            return _mix64_array(state)

    def uniform(self, shape=()) -> np.ndarray | float:
        count = int(np.prod(shape)) if shape != () else 1
        u = (self.raw(count) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return float(u[0]) if shape == () else u.reshape(shape)

    def normal(self, shape=()) -> np.ndarray | float:
        count = int(np.prod(shape)) if shape != () else 1
        pairs = (count + 1) // 2
        u = self.uniform((pairs, 2))
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.column_stack([r * np.cos(theta), r * np.sin(theta)]).reshape(-1)[:count]
        return float(z[0]) if shape == () else z.reshape(shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray | int:
        """Integers in ``[low, high)`` via ``floor(u * (high - low))``."""
        u = self.uniform(shape)
        out = low + np.floor(np.asarray(u) * (high - low)).astype(np.int64)
        return int(out) if shape == () else out
