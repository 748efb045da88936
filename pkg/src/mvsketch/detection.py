"""Recovering heavy flows from sketch state.

Heavy hitters come from one sketch: scan every bucket whose value_sum
clears the threshold, take its candidate key, and keep the key if its
point estimate also clears the threshold. Because the point estimate
never underestimates, no flow whose true sum reaches the threshold can
be rejected here; misses can only happen when a heavy flow failed to
become the candidate of any of its buckets.

Heavy changers come from a pair of sketches (previous/current epoch).
Rather than differencing counters (where opposite-direction changes
colliding in a bucket cancel), each candidate is scored with its
estimated maximum change: the largest cross-epoch gap between one
epoch's upper bound and the other's lower bound. That score never
underestimates the true absolute change.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from ._hash import lanes_to_key
from .sketch import FlowEstimate, Sketch


@dataclass(frozen=True)
class HeavyReport:
    """Deduplicated detection output, ordered (estimate desc, key asc)."""

    entries: tuple[tuple[bytes, int], ...]
    threshold: float

    def keys(self) -> set[bytes]:
        return {key for key, _ in self.entries}

    def as_dict(self) -> dict[bytes, int]:
        return dict(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class ChangeEstimate:
    """Estimated maximum change of one flow across two epochs; never
    below the true absolute change."""

    dhat: int


def _sorted_entries(pairs: list[tuple[bytes, int]]) -> tuple[tuple[bytes, int], ...]:
    return tuple(sorted(pairs, key=lambda kv: (-kv[1], kv[0])))


def detect_heavy_hitters(sketch: Sketch, threshold: float) -> HeavyReport:
    """All flows the sketch can certify at or above an absolute
    threshold."""
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    lo, hi = sketch.candidate_keys_above(threshold)
    ests = sketch.query_batch(lo, hi)
    keep = ests >= threshold
    kb = sketch.config.key_bytes
    pairs = [
        (lanes_to_key(int(l), int(h), kb), int(e))
        for l, h, e in zip(lo[keep], hi[keep], ests[keep])
    ]
    return HeavyReport(entries=_sorted_entries(pairs), threshold=threshold)


def _check_pair(sketch1: Sketch, sketch2: Sketch) -> None:
    if sketch1.config != sketch2.config:
        raise ValueError("sketches are not merge-compatible (configs differ)")


def _dhat_batch(
    sketch1: Sketch, sketch2: Sketch, lo: np.ndarray, hi: np.ndarray
) -> np.ndarray:
    u1, l1 = sketch1.bounds_batch(lo, hi)
    u2, l2 = sketch2.bounds_batch(lo, hi)
    a = np.where(u1 > l2, u1 - l2, l2 - u1)
    b = np.where(l1 > u2, l1 - u2, u2 - l1)
    return np.maximum(a, b)


def estimated_max_change(sketch1: Sketch, sketch2: Sketch, key: bytes) -> ChangeEstimate:
    """max(|upper1 - lower2|, |lower1 - upper2|) for one flow."""
    _check_pair(sketch1, sketch2)
    b1 = sketch1.bounds(key)
    b2 = sketch2.bounds(key)
    dhat = max(abs(b1.upper - b2.lower), abs(b1.lower - b2.upper))
    return ChangeEstimate(dhat=dhat)


def detect_heavy_changers(sketch1: Sketch, sketch2: Sketch, threshold: float) -> HeavyReport:
    """All flows whose estimated maximum change clears the threshold.

    Candidates are the stored keys of every bucket, in either epoch,
    whose value_sum clears the threshold (a true heavy changer must
    reach the threshold in at least one epoch, so its buckets pass the
    filter there).
    """
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    _check_pair(sketch1, sketch2)
    lo1, hi1 = sketch1.candidate_keys_above(threshold)
    lo2, hi2 = sketch2.candidate_keys_above(threshold)
    lo = np.concatenate([lo1, lo2])
    hi = np.concatenate([hi1, hi2])
    pairs_arr = np.empty(len(lo), dtype=[("lo", "<u8"), ("hi", "<u8")])
    pairs_arr["lo"] = lo
    pairs_arr["hi"] = hi
    uniq = np.unique(pairs_arr)
    lo = uniq["lo"].astype(np.uint64)
    hi = uniq["hi"].astype(np.uint64)
    dhat = _dhat_batch(sketch1, sketch2, lo, hi)
    keep = dhat >= threshold
    kb = sketch1.config.key_bytes
    pairs = [
        (lanes_to_key(int(l), int(h), kb), int(d))
        for l, h, d in zip(lo[keep], hi[keep], dhat[keep])
    ]
    return HeavyReport(entries=_sorted_entries(pairs), threshold=threshold)


# -- report io ----------------------------------------------------------------


def write_key_estimate_csv(
    rows: list[tuple[bytes, int]], path: Union[str, Path]
) -> None:
    """CSV emission shared by reports and candidate lists."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write("key_hex,estimate\n")
        for key, est in rows:
            fh.write(f"{key.hex()},{est}\n")


def read_key_estimate_csv(path: Union[str, Path]) -> list[tuple[bytes, int]]:
    out: list[tuple[bytes, int]] = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "key_hex,estimate":
            raise ValueError(f"bad report header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            key_hex, _, est_s = line.partition(",")
            try:
                out.append((bytes.fromhex(key_hex), int(est_s)))
            except ValueError:
                raise ValueError(f"line {lineno}: malformed report row") from None
    return out


def write_report_csv(report: HeavyReport, path: Union[str, Path]) -> None:
    write_key_estimate_csv(list(report.entries), path)
