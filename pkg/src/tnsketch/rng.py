"""Seed derivation and counter-based random values.

Every random quantity in the package is a pure function of a 64-bit root
seed, a tuple of stream names and an integer counter. Named streams are
derived with ``numpy.random.SeedSequence``; individual values come from a
splitmix64 hash of ``(stream key, counter)`` so any entry of any sketch
matrix can be regenerated on its own without storing the matrix.
"""

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _name_key(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name) & 0xFFFFFFFF
    digest = hashlib.blake2b(str(name).encode(), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def derive_seed(root: int, *names) -> int:
    """64-bit seed of the stream ``names`` under ``root``."""
    ss = np.random.SeedSequence(int(root) & _MASK64, spawn_key=tuple(_name_key(n) for n in names))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)


def generator(root: int, *names) -> np.random.Generator:
    """Philox generator for a named stream."""
    return np.random.Generator(np.random.Philox(key=derive_seed(root, *names)))


def splitmix64(x: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 finalizer on uint64 input."""
    z = np.asarray(x, dtype=np.uint64) + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_counter(seed: int, counter) -> np.ndarray:
    """Pseudo-random uint64 for each counter value in the stream ``seed``."""
    key = splitmix64(np.array([int(seed) & _MASK64], dtype=np.uint64))[0]
    c = np.asarray(counter).astype(np.uint64, copy=False)
    with np.errstate(over="ignore"):
        return splitmix64(c * _GOLDEN ^ key)


def uniform01(seed: int, counter) -> np.ndarray:
    """Uniform values in the open interval (0, 1)."""
    h = hash_counter(seed, counter)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normal(seed: int, counter) -> np.ndarray:
    """Standard normals via Box-Muller on two hashed uniforms per counter."""
    c = np.asarray(counter).astype(np.uint64, copy=False)
    with np.errstate(over="ignore"):
        u1 = uniform01(seed, c * np.uint64(2))
        u2 = uniform01(seed, c * np.uint64(2) + np.uint64(1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def bucket(h: np.ndarray, r: int) -> np.ndarray:
    """Map uint64 hashes to ``[0, r)`` using the high 32 bits (multiply-shift)."""
    if r >= 1 << 32:
        return (h % np.uint64(r)).astype(np.int64)
    hi = h >> np.uint64(32)
    return ((hi * np.uint64(r)) >> np.uint64(32)).astype(np.int64)
