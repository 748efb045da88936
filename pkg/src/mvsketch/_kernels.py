"""Numba-compiled batch kernels for the sketch hot paths.

All kernels replicate the scalar Python implementations in ``sketch.py``
exactly, packet by packet, in stream order. Test suites assert bit
equivalence between the two paths; any change here must keep that.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_LO32 = np.uint64(0xFFFFFFFF)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S32 = np.uint64(32)
_ONE = np.uint64(1)


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def _column(lo, hi, row_seed, cols):
    h = _mix64(row_seed ^ lo)
    h = _mix64((h + _GOLDEN) ^ hi)
    a_lo = h & _LO32
    a_hi = h >> _S32
    b_lo = cols & _LO32
    b_hi = cols >> _S32
    t = a_lo * b_lo
    cross = (t >> _S32) + (a_hi * b_lo & _LO32) + a_lo * b_hi
    return np.int64(a_hi * b_hi + ((a_hi * b_lo) >> _S32) + (cross >> _S32))


@njit(cache=True)
def update_batch(sums, votes, klo, khi, seeds, cols, lo, hi, val):
    rows = seeds.shape[0]
    for p in range(lo.shape[0]):
        key_lo = lo[p]
        key_hi = hi[p]
        v = val[p]
        for i in range(rows):
            j = _column(key_lo, key_hi, seeds[i], cols)
            sums[i, j] += v
            if klo[i, j] == key_lo and khi[i, j] == key_hi:
                votes[i, j] += v
            elif votes[i, j] < v:
                # vote count would drop below zero: the new key takes over
                klo[i, j] = key_lo
                khi[i, j] = key_hi
                votes[i, j] = v - votes[i, j]
            else:
                votes[i, j] -= v


@njit(cache=True)
def query_batch(sums, votes, klo, khi, seeds, cols, lo, hi, out):
    rows = seeds.shape[0]
    for p in range(lo.shape[0]):
        key_lo = lo[p]
        key_hi = hi[p]
        best = np.uint64(0xFFFFFFFFFFFFFFFF)
        for i in range(rows):
            j = _column(key_lo, key_hi, seeds[i], cols)
            if klo[i, j] == key_lo and khi[i, j] == key_hi:
                est = (sums[i, j] + votes[i, j]) >> _ONE
            else:
                est = (sums[i, j] - votes[i, j]) >> _ONE
            if est < best:
                best = est
        out[p] = best


@njit(cache=True)
def bounds_batch(sums, votes, klo, khi, seeds, cols, lo, hi, out_upper, out_lower):
    rows = seeds.shape[0]
    for p in range(lo.shape[0]):
        key_lo = lo[p]
        key_hi = hi[p]
        upper = np.uint64(0xFFFFFFFFFFFFFFFF)
        lower = np.uint64(0)
        for i in range(rows):
            j = _column(key_lo, key_hi, seeds[i], cols)
            if klo[i, j] == key_lo and khi[i, j] == key_hi:
                est = (sums[i, j] + votes[i, j]) >> _ONE
                if votes[i, j] > lower:
                    lower = votes[i, j]
            else:
                est = (sums[i, j] - votes[i, j]) >> _ONE
            if est < upper:
                upper = est
        out_upper[p] = upper
        out_lower[p] = lower


def warmup() -> None:
    """Force compilation of all kernels on tiny inputs."""
    z = np.zeros((1, 1), dtype=np.uint64)
    seeds = np.zeros(1, dtype=np.uint64)
    one = np.ones(1, dtype=np.uint64)
    out = np.zeros(1, dtype=np.uint64)
    update_batch(z.copy(), z.copy(), z.copy(), z.copy(), seeds, np.uint64(1), one, one, one)
    query_batch(z, z, z, z, seeds, np.uint64(1), one, one, out)
    bounds_batch(z, z, z, z, seeds, np.uint64(1), one, one, out, out.copy())
