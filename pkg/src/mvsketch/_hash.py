"""Seeded 64-bit key hashing shared by the sketch, the oracle, and the
traffic partitioner.

Flow keys are fixed-width byte strings of up to 16 bytes. Internally a key
is carried as two little-endian 64-bit lanes (bytes 0..7 in ``lo``, bytes
8..15 in ``hi``, zero padded), which keeps batch code on plain uint64
arrays.

Each sketch row owns a 64-bit row seed derived from the sketch seed, and
hashes a key with two rounds of the splitmix64 finalizer. The 64-bit hash
is reduced to a column index by multiply-shift (``(h * w) >> 64``), which
is unbiased enough for any column count, power of two or not.

Three implementations of the same function live here and are tested
against each other: a scalar pure-Python one (reference and per-packet
paths), a numpy-vectorized one (oracle, partitioning, precomputation), and
a numba-compiled scalar one in ``_kernels`` (hot update/query loops).
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# numpy scalars of the same constants, for the vectorized path
_NP_GOLDEN = np.uint64(GOLDEN)
_NP_MIX1 = np.uint64(_MIX1)
_NP_MIX2 = np.uint64(_MIX2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)


def mix64(z: int) -> int:
    """splitmix64 finalizer on a 64-bit integer (pure Python)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def row_seeds(seed: int, rows: int) -> np.ndarray:
    """Derive one 64-bit seed per row from the sketch seed.

    Row i gets the i-th output of the splitmix64 stream started at
    ``seed``, so equal (seed, row) always yields the same hash function.
    """
    out = np.empty(rows, dtype=np.uint64)
    for i in range(rows):
        out[i] = mix64((seed + (i + 1) * GOLDEN) & _MASK64)
    return out


def hash_key(lo: int, hi: int, row_seed: int) -> int:
    """64-bit hash of a key (as lanes) under one row seed."""
    h = mix64(row_seed ^ lo)
    h = mix64(((h + GOLDEN) & _MASK64) ^ hi)
    return h


def column_of(lo: int, hi: int, row_seed: int, cols: int) -> int:
    """Column index in [0, cols) for a key under one row seed."""
    return (hash_key(lo, hi, row_seed) * cols) >> 64


def _np_mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _NP_MIX1
    z = (z ^ (z >> _S27)) * _NP_MIX2
    return z ^ (z >> _S31)


def np_hash_keys(lo: np.ndarray, hi: np.ndarray, row_seed: int) -> np.ndarray:
    """Vectorized ``hash_key`` over uint64 lane arrays."""
    h = _np_mix64(np.uint64(row_seed) ^ lo)
    h = _np_mix64((h + _NP_GOLDEN) ^ hi)
    return h


def np_columns(lo: np.ndarray, hi: np.ndarray, row_seed: int, cols: int) -> np.ndarray:
    """Vectorized ``column_of``: multiply-shift reduction of the hash."""
    h = np_hash_keys(lo, hi, row_seed)
    w = np.uint64(cols)
    lo32 = np.uint64(0xFFFFFFFF)
    s32 = np.uint64(32)
    a_lo = h & lo32
    a_hi = h >> s32
    b_lo = w & lo32
    b_hi = w >> s32
    t = a_lo * b_lo
    cross = (t >> s32) + (a_hi * b_lo & lo32) + a_lo * b_hi
    return a_hi * b_hi + ((a_hi * b_lo) >> s32) + (cross >> s32)


def key_to_lanes(key: bytes) -> tuple[int, int]:
    """Pack a key of 1..16 bytes into (lo, hi) little-endian lanes."""
    if not 1 <= len(key) <= 16:
        raise ValueError(f"key must be 1..16 bytes, got {len(key)}")
    lo = int.from_bytes(key[:8], "little")
    hi = int.from_bytes(key[8:], "little") if len(key) > 8 else 0
    return lo, hi


def lanes_to_key(lo: int, hi: int, key_bytes: int) -> bytes:
    """Inverse of ``key_to_lanes`` for a known key width."""
    raw = int(lo).to_bytes(8, "little") + int(hi).to_bytes(8, "little")
    return raw[:key_bytes]


def lanes_to_key_array(lo: np.ndarray, hi: np.ndarray, key_bytes: int) -> np.ndarray:
    """Key byte matrix of shape (n, key_bytes) from lane arrays."""
    n = lo.shape[0]
    raw = np.empty((n, 16), dtype=np.uint8)
    raw[:, :8] = np.ascontiguousarray(lo, dtype="<u8").view(np.uint8).reshape(n, 8)
    raw[:, 8:] = np.ascontiguousarray(hi, dtype="<u8").view(np.uint8).reshape(n, 8)
    return raw[:, :key_bytes]


def key_array_to_lanes(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lane arrays from a (n, key_bytes) uint8 key matrix."""
    n, kb = keys.shape
    raw = np.zeros((n, 16), dtype=np.uint8)
    raw[:, :kb] = keys
    lo = raw[:, :8].copy().view("<u8").reshape(n)
    hi = raw[:, 8:].copy().view("<u8").reshape(n)
    return lo.astype(np.uint64), hi.astype(np.uint64)
