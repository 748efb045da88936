"""Invertible majority-vote sketch.

The sketch is an r x w array of buckets. Each bucket keeps three fields
for the flows hashed into it:

* ``value_sum``: total of all values inserted into the bucket,
* ``key``: the current candidate heavy flow of the bucket,
* ``votes``: an indicator counter that says how strongly the candidate
  currently holds the bucket.

Updates run the weighted majority-vote rule per bucket: a packet for the
stored candidate adds its value to ``votes``; any other packet subtracts
it, and when the counter would drop below zero the new key takes over with
the remainder as its vote. Per bucket this guarantees that any flow
holding more than half of ``value_sum`` ends the epoch as the stored
candidate, which is what makes the sketch invertible: heavy flows can be
recovered by scanning buckets, with no enumeration of the key space.

A point query returns, per row, ``(value_sum + votes) / 2`` when the key
matches the stored candidate and ``(value_sum - votes) / 2`` otherwise,
then takes the row minimum. The result never underestimates the true
per-flow sum. ``bounds`` additionally produces a true lower bound (the
vote count where the flow is the stored candidate, else 0).

Counters are unsigned 64-bit. To keep every internal expression (such as
``value_sum + votes``) overflow free, the sketch refuses updates that
would push the stream total past 2**63 - 1 and raises instead of
wrapping.

Two update paths exist: ``update`` (scalar, pure Python, the readable
reference) and ``update_batch`` (numba-compiled, used for full traces).
They are bit-equivalent and the tests enforce it.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from ._hash import (
    column_of,
    key_to_lanes,
    lanes_to_key,
    lanes_to_key_array,
    key_array_to_lanes,
    row_seeds,
)

MAX_TOTAL = (1 << 63) - 1

_MAGIC = b"MVSK"
_FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIBQQ")  # magic, version, rows, cols, key_bytes, seed, total


class SketchFormatError(ValueError):
    """Raised when serialized sketch bytes cannot be decoded."""


def params_from_error(epsilon: float, delta: float) -> tuple[int, int]:
    """(rows, cols) needed for additive error epsilon with failure
    probability delta.

    rows = ceil(log2(1/delta)) and cols = ceil(2/epsilon). With this
    shape a point query overestimates a flow by more than
    epsilon * total / 2 with probability at most delta.
    """
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")

    def _ceil_guarded(x: float) -> int:
        # protect exact targets (e.g. 2/0.001) from float noise
        if abs(x - round(x)) < 1e-6:
            return int(round(x))
        return math.ceil(x)

    return _ceil_guarded(math.log2(1.0 / delta)), _ceil_guarded(2.0 / epsilon)


def cols_for_memory(budget_bytes: int, rows: int, key_bytes: int) -> int:
    """Columns that fit a memory budget: floor(budget / (rows * bucket)).

    A bucket costs 16 bytes of counters plus ``key_bytes`` of key;
    padding is not counted.
    """
    if rows < 1 or not 1 <= key_bytes <= 16:
        raise ValueError("invalid rows/key_bytes")
    cols = budget_bytes // (rows * (16 + key_bytes))
    if cols < 1:
        raise ValueError(
            f"budget of {budget_bytes} bytes holds no bucket row at rows={rows}, "
            f"key_bytes={key_bytes}"
        )
    return cols


@dataclass(frozen=True)
class SketchConfig:
    """Shape and hashing identity of a sketch.

    Two sketches can be merged or compared only when all four fields are
    equal: merging requires identical hash functions, and those are fully
    determined by (rows, cols, key_bytes, seed).
    """

    rows: int
    cols: int
    key_bytes: int
    seed: int

    def __post_init__(self) -> None:
        if self.rows < 1:
            raise ValueError(f"rows must be >= 1, got {self.rows}")
        if self.cols < 1:
            raise ValueError(f"cols must be >= 1, got {self.cols}")
        if not 1 <= self.key_bytes <= 16:
            raise ValueError(f"key_bytes must be in [1, 16], got {self.key_bytes}")
        if not 0 <= self.seed < (1 << 64):
            raise ValueError("seed must fit in 64 bits")

    @classmethod
    def from_error(
        cls, epsilon: float, delta: float, key_bytes: int = 8, seed: int = 1
    ) -> "SketchConfig":
        rows, cols = params_from_error(epsilon, delta)
        return cls(rows=rows, cols=cols, key_bytes=key_bytes, seed=seed)

    @classmethod
    def from_memory(
        cls, budget_bytes: int, rows: int = 4, key_bytes: int = 8, seed: int = 1
    ) -> "SketchConfig":
        cols = cols_for_memory(budget_bytes, rows, key_bytes)
        return cls(rows=rows, cols=cols, key_bytes=key_bytes, seed=seed)

    @property
    def bucket_bytes(self) -> int:
        return 16 + self.key_bytes

    @property
    def memory_bytes(self) -> int:
        return self.rows * self.cols * self.bucket_bytes


class Bucket(NamedTuple):
    value_sum: int
    key: bytes
    votes: int


@dataclass(frozen=True)
class FlowEstimate:
    """Point estimate plus true upper/lower bounds for one flow.

    ``lower <= true sum <= upper`` always holds; ``point`` equals
    ``upper`` (the point query is itself the upper bound).
    """

    point: int
    upper: int
    lower: int


class Sketch:
    """One measurement epoch's sketch state. Single writer; query only
    when no update is in flight."""

    def __init__(self, config: SketchConfig):
        self.config = config
        shape = (config.rows, config.cols)
        self._sums = np.zeros(shape, dtype=np.uint64)
        self._votes = np.zeros(shape, dtype=np.uint64)
        self._keys_lo = np.zeros(shape, dtype=np.uint64)
        self._keys_hi = np.zeros(shape, dtype=np.uint64)
        self._row_seeds = row_seeds(config.seed, config.rows)
        self.total = 0

    @classmethod
    def new(cls, config: SketchConfig) -> "Sketch":
        return cls(config)

    # -- hashing ----------------------------------------------------------

    def hash_row(self, row: int, key: bytes) -> int:
        """Column index of ``key`` in ``row`` (both 0-based)."""
        if not 0 <= row < self.config.rows:
            raise ValueError(f"row {row} out of range")
        lo, hi = self._check_key(key)
        return column_of(lo, hi, int(self._row_seeds[row]), self.config.cols)

    def _check_key(self, key: bytes) -> tuple[int, int]:
        if len(key) != self.config.key_bytes:
            raise ValueError(
                f"key must be {self.config.key_bytes} bytes, got {len(key)}"
            )
        return key_to_lanes(key)

    # -- updates ----------------------------------------------------------

    def update(self, key: bytes, value: int) -> None:
        """Insert one (key, value) pair. Scalar reference path."""
        lo, hi = self._check_key(key)
        if value < 0:
            raise ValueError("value must be non-negative")
        if self.total + value > MAX_TOTAL:
            raise OverflowError("sketch total counter capacity exceeded")
        for i in range(self.config.rows):
            j = column_of(lo, hi, int(self._row_seeds[i]), self.config.cols)
            self._sums[i, j] += np.uint64(value)
            votes = int(self._votes[i, j])
            if int(self._keys_lo[i, j]) == lo and int(self._keys_hi[i, j]) == hi:
                self._votes[i, j] = np.uint64(votes + value)
            elif votes < value:
                self._keys_lo[i, j] = np.uint64(lo)
                self._keys_hi[i, j] = np.uint64(hi)
                self._votes[i, j] = np.uint64(value - votes)
            else:
                self._votes[i, j] = np.uint64(votes - value)
        self.total += value

    def update_batch(
        self, key_lo: np.ndarray, key_hi: np.ndarray, values: np.ndarray
    ) -> None:
        """Insert a whole stream (lane arrays + values), in order.

        Bit-equivalent to calling ``update`` per packet; compiled.
        """
        key_lo, key_hi, values = _as_lanes(key_lo, key_hi, values)
        batch_total = _exact_sum(values)
        if self.total + batch_total > MAX_TOTAL:
            raise OverflowError("sketch total counter capacity exceeded")
        _kernels.update_batch(
            self._sums,
            self._votes,
            self._keys_lo,
            self._keys_hi,
            self._row_seeds,
            np.uint64(self.config.cols),
            key_lo,
            key_hi,
            values,
        )
        self.total += batch_total

    # -- queries ----------------------------------------------------------

    def query(self, key: bytes) -> int:
        """Point estimate of the flow's sum; never underestimates."""
        lo, hi = self._check_key(key)
        return self._query_lanes(lo, hi)

    def _query_lanes(self, lo: int, hi: int) -> int:
        best = None
        for i in range(self.config.rows):
            j = column_of(lo, hi, int(self._row_seeds[i]), self.config.cols)
            v = int(self._sums[i, j])
            c = int(self._votes[i, j])
            if int(self._keys_lo[i, j]) == lo and int(self._keys_hi[i, j]) == hi:
                est = (v + c) // 2
            else:
                est = (v - c) // 2
            best = est if best is None else min(best, est)
        return best

    def query_batch(self, key_lo: np.ndarray, key_hi: np.ndarray) -> np.ndarray:
        key_lo = np.ascontiguousarray(key_lo, dtype=np.uint64)
        key_hi = np.ascontiguousarray(key_hi, dtype=np.uint64)
        out = np.empty(key_lo.shape[0], dtype=np.uint64)
        _kernels.query_batch(
            self._sums,
            self._votes,
            self._keys_lo,
            self._keys_hi,
            self._row_seeds,
            np.uint64(self.config.cols),
            key_lo,
            key_hi,
            out,
        )
        return out

    def bounds(self, key: bytes) -> FlowEstimate:
        """Upper and lower bounds on the flow's true sum."""
        lo, hi = self._check_key(key)
        upper = self._query_lanes(lo, hi)
        lower = 0
        for i in range(self.config.rows):
            j = column_of(lo, hi, int(self._row_seeds[i]), self.config.cols)
            if int(self._keys_lo[i, j]) == lo and int(self._keys_hi[i, j]) == hi:
                lower = max(lower, int(self._votes[i, j]))
        return FlowEstimate(point=upper, upper=upper, lower=lower)

    def bounds_batch(
        self, key_lo: np.ndarray, key_hi: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """(upper, lower) arrays for a batch of keys."""
        key_lo = np.ascontiguousarray(key_lo, dtype=np.uint64)
        key_hi = np.ascontiguousarray(key_hi, dtype=np.uint64)
        upper = np.empty(key_lo.shape[0], dtype=np.uint64)
        lower = np.empty(key_lo.shape[0], dtype=np.uint64)
        _kernels.bounds_batch(
            self._sums,
            self._votes,
            self._keys_lo,
            self._keys_hi,
            self._row_seeds,
            np.uint64(self.config.cols),
            key_lo,
            key_hi,
            upper,
            lower,
        )
        return upper, lower

    # -- inspection --------------------------------------------------------

    def bucket(self, row: int, col: int) -> Bucket:
        return Bucket(
            value_sum=int(self._sums[row, col]),
            key=lanes_to_key(
                int(self._keys_lo[row, col]),
                int(self._keys_hi[row, col]),
                self.config.key_bytes,
            ),
            votes=int(self._votes[row, col]),
        )

    def stored_keys(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique candidate keys over all non-empty buckets, as lanes.

        Buckets with ``value_sum == 0`` never received a packet and hold
        no candidate (their all-zero key is just the empty slot), so they
        are skipped. A genuine all-zero flow key is still returned: any
        insertion leaves its buckets with ``value_sum > 0``.
        """
        mask = self._sums.reshape(-1) > 0
        lo = self._keys_lo.reshape(-1)[mask]
        hi = self._keys_hi.reshape(-1)[mask]
        pairs = np.empty(lo.shape[0], dtype=[("lo", "<u8"), ("hi", "<u8")])
        pairs["lo"] = lo
        pairs["hi"] = hi
        uniq = np.unique(pairs)
        return uniq["lo"].astype(np.uint64), uniq["hi"].astype(np.uint64)

    def candidate_keys_above(self, threshold: float) -> tuple[np.ndarray, np.ndarray]:
        """Unique candidate keys of buckets whose value_sum clears a
        threshold."""
        mask = self._sums.reshape(-1) >= threshold
        mask &= self._sums.reshape(-1) > 0
        lo = self._keys_lo.reshape(-1)[mask]
        hi = self._keys_hi.reshape(-1)[mask]
        pairs = np.empty(lo.shape[0], dtype=[("lo", "<u8"), ("hi", "<u8")])
        pairs["lo"] = lo
        pairs["hi"] = hi
        uniq = np.unique(pairs)
        return uniq["lo"].astype(np.uint64), uniq["hi"].astype(np.uint64)

    def copy(self) -> "Sketch":
        dup = Sketch(self.config)
        dup._sums = self._sums.copy()
        dup._votes = self._votes.copy()
        dup._keys_lo = self._keys_lo.copy()
        dup._keys_hi = self._keys_hi.copy()
        dup.total = self.total
        return dup

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Sketch):
            return NotImplemented
        return (
            self.config == other.config
            and self.total == other.total
            and np.array_equal(self._sums, other._sums)
            and np.array_equal(self._votes, other._votes)
            and np.array_equal(self._keys_lo, other._keys_lo)
            and np.array_equal(self._keys_hi, other._keys_hi)
        )

    def __repr__(self) -> str:
        c = self.config
        return (
            f"Sketch(rows={c.rows}, cols={c.cols}, key_bytes={c.key_bytes}, "
            f"seed={c.seed}, total={self.total})"
        )

    # -- serialization ------------------------------------------------------

    def to_bytes(self) -> bytes:
        """Canonical serialization: little-endian header followed by
        row-major buckets, each packed as value_sum, votes, key bytes."""
        c = self.config
        header = _HEADER.pack(
            _MAGIC, _FORMAT_VERSION, c.rows, c.cols, c.key_bytes, c.seed, self.total
        )
        n = c.rows * c.cols
        rec = np.zeros(
            n,
            dtype=np.dtype(
                [("v", "<u8"), ("c", "<u8"), ("k", np.uint8, (c.key_bytes,))]
            ),
        )
        rec["v"] = self._sums.reshape(-1)
        rec["c"] = self._votes.reshape(-1)
        rec["k"] = lanes_to_key_array(
            self._keys_lo.reshape(-1), self._keys_hi.reshape(-1), c.key_bytes
        )
        return header + rec.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Sketch":
        if len(data) < _HEADER.size:
            raise SketchFormatError("truncated sketch: header incomplete")
        magic, version, rows, cols, key_bytes, seed, total = _HEADER.unpack_from(data)
        if magic != _MAGIC:
            raise SketchFormatError("bad magic, not a serialized sketch")
        if version != _FORMAT_VERSION:
            raise SketchFormatError(f"unsupported format version {version}")
        try:
            config = SketchConfig(rows=rows, cols=cols, key_bytes=key_bytes, seed=seed)
        except ValueError as exc:
            raise SketchFormatError(f"invalid config in sketch header: {exc}") from exc
        n = rows * cols
        body = data[_HEADER.size :]
        expected = n * (16 + key_bytes)
        if len(body) != expected:
            raise SketchFormatError(
                f"truncated or oversized sketch body: {len(body)} bytes, "
                f"expected {expected}"
            )
        if total > MAX_TOTAL:
            raise SketchFormatError("stored total exceeds counter capacity")
        rec = np.frombuffer(
            body,
            dtype=np.dtype(
                [("v", "<u8"), ("c", "<u8"), ("k", np.uint8, (key_bytes,))]
            ),
        )
        sketch = cls(config)
        sketch._sums = rec["v"].reshape(rows, cols).astype(np.uint64)
        sketch._votes = rec["c"].reshape(rows, cols).astype(np.uint64)
        keys = rec["k"].reshape(n, key_bytes)
        lo, hi = key_array_to_lanes(keys)
        sketch._keys_lo = lo.reshape(rows, cols)
        sketch._keys_hi = hi.reshape(rows, cols)
        sketch.total = int(total)
        if np.any(sketch._votes > sketch._sums):
            raise SketchFormatError("corrupt sketch: votes exceed value_sum")
        return sketch

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Sketch":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _as_lanes(key_lo, key_hi, values) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    key_lo = np.ascontiguousarray(key_lo, dtype=np.uint64)
    key_hi = np.ascontiguousarray(key_hi, dtype=np.uint64)
    values = np.ascontiguousarray(values, dtype=np.uint64)
    if not key_lo.shape == key_hi.shape == values.shape:
        raise ValueError("key_lo, key_hi and values must have equal length")
    return key_lo, key_hi, values


def _exact_sum(values: np.ndarray) -> int:
    """Exact integer sum of a uint64 array (no wraparound)."""
    if values.size == 0:
        return 0
    if int(values.max()) * values.size < MAX_TOTAL:
        return int(values.sum())
    return int(sum(int(v) for v in values))
