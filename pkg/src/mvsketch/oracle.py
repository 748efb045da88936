"""Exact ground truth for property tests and experiment scoring.

Everything here is brute force over full in-memory flow tables: exact
per-flow sums, exact cross-epoch changes, true heavy sets, and the true
majority flow of every bucket. Apart from sharing the key-to-column hash
derivation (which is the point: the oracle must talk about the same
buckets), none of this goes through sketch code.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ._hash import key_to_lanes, lanes_to_key, np_columns, row_seeds
from .sketch import SketchConfig
from .traffic import Trace


class _KeyValueTable:
    """Sorted (key lanes, value) columns plus a dict view."""

    def __init__(
        self,
        key_bytes: int,
        keys_lo: np.ndarray,
        keys_hi: np.ndarray,
        values: np.ndarray,
    ):
        self.key_bytes = key_bytes
        self.keys_lo = np.ascontiguousarray(keys_lo, dtype=np.uint64)
        self.keys_hi = np.ascontiguousarray(keys_hi, dtype=np.uint64)
        self.values = np.ascontiguousarray(values, dtype=np.int64)
        self._dict: Optional[dict[bytes, int]] = None

    def __len__(self) -> int:
        return len(self.values)

    def as_dict(self) -> dict[bytes, int]:
        if self._dict is None:
            self._dict = {
                lanes_to_key(int(lo), int(hi), self.key_bytes): int(v)
                for lo, hi, v in zip(self.keys_lo, self.keys_hi, self.values)
            }
        return self._dict

    def get(self, key: bytes, default: int = 0) -> int:
        return self.as_dict().get(key, default)

    def keys_at_least(self, threshold: float) -> set[bytes]:
        idx = np.flatnonzero(self.values >= threshold)
        return {
            lanes_to_key(int(self.keys_lo[i]), int(self.keys_hi[i]), self.key_bytes)
            for i in idx
        }


class FlowTable(_KeyValueTable):
    """Exact per-flow sums of one stream plus the stream total."""

    def __init__(self, key_bytes, keys_lo, keys_hi, values, total: int):
        super().__init__(key_bytes, keys_lo, keys_hi, values)
        self.total = total

    @property
    def sums(self) -> dict[bytes, int]:
        return self.as_dict()


class ChangeTable(_KeyValueTable):
    """Exact |sum change| per flow across two epochs.

    ``total`` is the summed absolute change of all flows;
    ``epoch_totals`` are the two stream totals the changes came from.
    """

    def __init__(self, key_bytes, keys_lo, keys_hi, values, total, epoch_totals):
        super().__init__(key_bytes, keys_lo, keys_hi, values)
        self.total = total
        self.epoch_totals = epoch_totals

    @property
    def changes(self) -> dict[bytes, int]:
        return self.as_dict()


def exact_counts(trace: Trace) -> FlowTable:
    """Aggregate a stream into its exact flow table."""
    n = len(trace)
    pairs = np.empty(n, dtype=[("lo", "<u8"), ("hi", "<u8")])
    pairs["lo"] = trace.key_lo
    pairs["hi"] = trace.key_hi
    uniq, inverse = np.unique(pairs, return_inverse=True)
    sums = np.zeros(len(uniq), dtype=np.int64)
    np.add.at(sums, inverse, trace.value.astype(np.int64))
    total = int(sums.sum())
    return FlowTable(
        trace.key_bytes,
        uniq["lo"].astype(np.uint64),
        uniq["hi"].astype(np.uint64),
        sums,
        total,
    )


def exact_changes(t1: FlowTable, t2: FlowTable) -> ChangeTable:
    """Exact absolute per-flow changes between two flow tables."""
    if t1.key_bytes != t2.key_bytes:
        raise ValueError("flow tables have different key widths")
    a = t1.as_dict()
    b = t2.as_dict()
    keys = sorted(set(a) | set(b))
    lo = np.empty(len(keys), dtype=np.uint64)
    hi = np.empty(len(keys), dtype=np.uint64)
    diff = np.empty(len(keys), dtype=np.int64)
    for i, k in enumerate(keys):
        lo[i], hi[i] = key_to_lanes(k)
        diff[i] = abs(a.get(k, 0) - b.get(k, 0))
    return ChangeTable(
        t1.key_bytes, lo, hi, diff, int(diff.sum()), (t1.total, t2.total)
    )


def true_heavy(table: _KeyValueTable, phi: float) -> set[bytes]:
    """Keys whose exact value reaches phi times the table total."""
    if not 0 < phi <= 1:
        raise ValueError(f"phi must be in (0, 1], got {phi}")
    return table.keys_at_least(phi * table.total)


def heavy_at(table: _KeyValueTable, threshold: float) -> set[bytes]:
    """Keys whose exact value reaches an absolute threshold."""
    return table.keys_at_least(threshold)


def threshold_for_target(table: _KeyValueTable, target: int) -> int:
    """Absolute threshold that marks about ``target`` flows as heavy.

    Returns the target-th largest exact value, so at least ``target``
    flows qualify (ties can add a few more). Falls back to the smallest
    value when the table has fewer flows, and to 1 when it is empty.
    """
    if target < 1:
        raise ValueError("target must be >= 1")
    if len(table) == 0:
        return 1
    vals = np.sort(table.values)[::-1]
    return int(vals[min(target, len(vals)) - 1])


def bucket_majorities(
    table: FlowTable, config: SketchConfig
) -> list[dict[int, tuple[int, int]]]:
    """Per row, the true majority flow (as key lanes) of every column
    that has one.

    A flow is the majority of a column when its exact sum is strictly
    more than half of the column's total exact mass. At most one flow
    per column can satisfy that.
    """
    if table.key_bytes != config.key_bytes:
        raise ValueError("table and config key widths differ")
    seeds = row_seeds(config.seed, config.rows)
    out: list[dict[int, tuple[int, int]]] = []
    vals = table.values
    for i in range(config.rows):
        cols = np_columns(table.keys_lo, table.keys_hi, int(seeds[i]), config.cols)
        col_idx = cols.astype(np.int64)
        tot = np.zeros(config.cols, dtype=np.int64)
        np.add.at(tot, col_idx, vals)
        is_majority = 2 * vals > tot[col_idx]
        row_map = {
            int(col_idx[f]): (int(table.keys_lo[f]), int(table.keys_hi[f]))
            for f in np.flatnonzero(is_majority)
        }
        out.append(row_map)
    return out


def bucket_majority(
    trace: Trace, config: SketchConfig, row: int, col: int
) -> Optional[bytes]:
    """Majority flow of one bucket for a stream, or None if there is none
    (a flow holding exactly half is not a majority)."""
    if not 0 <= row < config.rows or not 0 <= col < config.cols:
        raise ValueError("bucket index out of range")
    table = exact_counts(trace)
    majorities = bucket_majorities(table, config)
    lanes = majorities[row].get(col)
    if lanes is None:
        return None
    return lanes_to_key(lanes[0], lanes[1], config.key_bytes)


def write_table_csv(table: _KeyValueTable, path: Union[str, Path]) -> None:
    """Dump a flow or change table as ``key_hex,sum`` rows (key order)."""
    items = sorted(table.as_dict().items())
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write("key_hex,sum\n")
        for key, val in items:
            fh.write(f"{key.hex()},{val}\n")


def read_table_csv(path: Union[str, Path]) -> FlowTable:
    """Read a ``key_hex,sum`` file back into a flow table."""
    keys: list[bytes] = []
    vals: list[int] = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "key_hex,sum":
            raise ValueError(f"bad table header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            key_hex, _, val_s = line.partition(",")
            try:
                keys.append(bytes.fromhex(key_hex))
                vals.append(int(val_s))
            except ValueError:
                raise ValueError(f"line {lineno}: malformed table row") from None
    if not keys:
        return FlowTable(8, np.zeros(0, np.uint64), np.zeros(0, np.uint64), np.zeros(0, np.int64), 0)
    kb = len(keys[0])
    if any(len(k) != kb for k in keys):
        raise ValueError("inconsistent key widths in table file")
    lo = np.empty(len(keys), dtype=np.uint64)
    hi = np.empty(len(keys), dtype=np.uint64)
    for i, k in enumerate(keys):
        lo[i], hi[i] = key_to_lanes(k)
    return FlowTable(kb, lo, hi, np.asarray(vals, dtype=np.int64), int(sum(vals)))
