"""Distributed detection: scalable candidate aggregation and
network-wide sketch merging.

Scalable detection splits one stream across q detectors (each flow pinned
to d of them, each packet picking one of the d uniformly). At epoch end
every detector reports candidate tuples whose local estimate clears the
local threshold (the global threshold divided by d), and the controller
sums estimates per key: a flow above the global threshold that all d of
its detectors reported must sum back over it.

Network-wide detection instead assumes detectors see disjoint traffic
with identical sketch configs. The controller merges the sketches bucket
by bucket: value sums add; the merged candidate is the key with the
largest summed per-detector upper bound, and the merged vote counter is
clamped so the merged bucket keeps the same bound guarantees as a bucket
that saw the union stream directly. Estimate ties between distinct keys
resolve to the bytewise-smallest key so merging is a pure function of its
inputs.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ._hash import lanes_to_key
from .detection import HeavyReport, _dhat_batch, _sorted_entries
from .sketch import MAX_TOTAL, Sketch


@dataclass(frozen=True)
class ScalableConfig:
    """q detectors, each flow replicated to d of them."""

    q: int
    d: int
    selection_seed: int = 0

    def __post_init__(self) -> None:
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if not 1 <= self.d <= self.q:
            raise ValueError(f"need 1 <= d <= q, got d={self.d}, q={self.q}")


class CandidateTuple(NamedTuple):
    key: bytes
    estimate: int


def detector_candidates_hh(sketch: Sketch, local_threshold: float) -> list[CandidateTuple]:
    """Stored candidate keys whose point estimate clears the local
    threshold, as (key, estimate) tuples for the controller."""
    if local_threshold <= 0:
        raise ValueError("local threshold must be > 0")
    lo, hi = sketch.stored_keys()
    ests = sketch.query_batch(lo, hi)
    keep = ests >= local_threshold
    kb = sketch.config.key_bytes
    pairs = [
        (lanes_to_key(int(l), int(h), kb), int(e))
        for l, h, e in zip(lo[keep], hi[keep], ests[keep])
    ]
    return [CandidateTuple(*kv) for kv in _sorted_entries(pairs)]


def detector_candidates_hc(
    sketch1: Sketch, sketch2: Sketch, local_threshold: float
) -> list[CandidateTuple]:
    """Candidate keys of either epoch's loaded buckets whose estimated
    maximum change clears the local threshold."""
    if local_threshold <= 0:
        raise ValueError("local threshold must be > 0")
    if sketch1.config != sketch2.config:
        raise ValueError("sketches are not merge-compatible (configs differ)")
    lo1, hi1 = sketch1.candidate_keys_above(local_threshold)
    lo2, hi2 = sketch2.candidate_keys_above(local_threshold)
    pairs_arr = np.empty(len(lo1) + len(lo2), dtype=[("lo", "<u8"), ("hi", "<u8")])
    pairs_arr["lo"] = np.concatenate([lo1, lo2])
    pairs_arr["hi"] = np.concatenate([hi1, hi2])
    uniq = np.unique(pairs_arr)
    lo = uniq["lo"].astype(np.uint64)
    hi = uniq["hi"].astype(np.uint64)
    dhat = _dhat_batch(sketch1, sketch2, lo, hi)
    keep = dhat >= local_threshold
    kb = sketch1.config.key_bytes
    pairs = [
        (lanes_to_key(int(l), int(h), kb), int(d))
        for l, h, d in zip(lo[keep], hi[keep], dhat[keep])
    ]
    return [CandidateTuple(*kv) for kv in _sorted_entries(pairs)]


def controller_aggregate(
    candidate_lists: Sequence[Sequence[CandidateTuple]], global_threshold: float
) -> HeavyReport:
    """Sum candidate estimates per key across detectors and report keys
    whose summed estimate clears the global threshold."""
    if global_threshold <= 0:
        raise ValueError("global threshold must be > 0")
    summed: dict[bytes, int] = defaultdict(int)
    for cands in candidate_lists:
        for key, est in cands:
            summed[key] += est
    pairs = [(k, v) for k, v in summed.items() if v >= global_threshold]
    return HeavyReport(entries=_sorted_entries(pairs), threshold=global_threshold)


def merge(sketches: Sequence[Sketch]) -> Sketch:
    """Merge same-config sketches over disjoint traffic into one sketch.

    Per bucket: value sums add; each detector's stored key is scored with
    its summed cross-detector upper bound, the best key wins (bytewise
    smallest on ties), and the merged vote counter is
    max(2 * best_score - value_sum, 0). Keys of never-touched buckets are
    empty slots, not candidates, and do not compete. The merged sketch
    keeps the upper/lower bound and majority-tracking guarantees of a
    single sketch fed the union stream.
    """
    if len(sketches) == 0:
        raise ValueError("need at least one sketch to merge")
    config = sketches[0].config
    for s in sketches[1:]:
        if s.config != config:
            raise ValueError("sketches are not merge-compatible (configs differ)")
    total = sum(s.total for s in sketches)
    if total > MAX_TOTAL:
        raise OverflowError("merged total exceeds counter capacity")

    vs = np.stack([s._sums for s in sketches])
    cs = np.stack([s._votes for s in sketches])
    los = np.stack([s._keys_lo for s in sketches])
    his = np.stack([s._keys_hi for s in sketches])
    one = np.uint64(1)
    half_plus = (vs + cs) >> one
    half_minus = (vs - cs) >> one
    merged_v = vs.sum(axis=0, dtype=np.uint64)

    shape = merged_v.shape
    has_best = np.zeros(shape, dtype=bool)
    best_e = np.zeros(shape, dtype=np.uint64)
    best_lo = np.zeros(shape, dtype=np.uint64)
    best_hi = np.zeros(shape, dtype=np.uint64)
    best_bs_lo = np.zeros(shape, dtype=np.uint64)
    best_bs_hi = np.zeros(shape, dtype=np.uint64)

    for k in range(len(sketches)):
        same = (los == los[k]) & (his == his[k])
        e_k = np.where(same, half_plus, half_minus).sum(axis=0, dtype=np.uint64)
        valid = vs[k] > 0
        bs_lo = los[k].byteswap()
        bs_hi = his[k].byteswap()
        smaller_key = (bs_lo < best_bs_lo) | ((bs_lo == best_bs_lo) & (bs_hi < best_bs_hi))
        better = valid & (
            ~has_best | (e_k > best_e) | ((e_k == best_e) & smaller_key)
        )
        best_e = np.where(better, e_k, best_e)
        best_lo = np.where(better, los[k], best_lo)
        best_hi = np.where(better, his[k], best_hi)
        best_bs_lo = np.where(better, bs_lo, best_bs_lo)
        best_bs_hi = np.where(better, bs_hi, best_bs_hi)
        has_best |= better

    two_e = best_e << one  # safe: best_e <= total <= MAX_TOTAL < 2**63
    merged_c = np.where(has_best & (two_e > merged_v), two_e - merged_v, np.uint64(0))

    out = Sketch(config)
    out._sums = merged_v
    out._votes = merged_c
    out._keys_lo = np.where(has_best, best_lo, np.uint64(0))
    out._keys_hi = np.where(has_best, best_hi, np.uint64(0))
    out.total = total
    return out
