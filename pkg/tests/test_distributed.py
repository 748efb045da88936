"""Scalable detector/controller protocol and network-wide merging."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvsketch import oracle, traffic
from mvsketch.detection import detect_heavy_changers, detect_heavy_hitters
from mvsketch.distributed import (
    CandidateTuple,
    ScalableConfig,
    controller_aggregate,
    detector_candidates_hc,
    detector_candidates_hh,
    merge,
)
from mvsketch.sketch import Sketch, SketchConfig
from mvsketch.traffic import NetworkWidePolicy, Trace

A = (0x0A).to_bytes(8, "little")
B = (0x0B).to_bytes(8, "little")


def loaded_bucket() -> Sketch:
    s = Sketch(SketchConfig(rows=1, cols=1, key_bytes=8, seed=1))
    for k, v in ((A, 3), (B, 1), (A, 2)):
        s.update(k, v)
    return s


def build(cfg: SketchConfig, tr: Trace) -> Sketch:
    s = Sketch(cfg)
    s.update_batch(tr.key_lo, tr.key_hi, tr.value)
    return s


# -- detector candidates ------------------------------------------------------


def test_candidates_hh():
    s = loaded_bucket()
    assert detector_candidates_hh(s, 5) == [CandidateTuple(A, 5)]
    assert detector_candidates_hh(s, 6) == []
    assert detector_candidates_hh(Sketch(s.config), 1) == []


def test_candidates_hc():
    s1 = loaded_bucket()
    empty = Sketch(s1.config)
    assert detector_candidates_hc(s1, empty, 5) == [CandidateTuple(A, 5)]
    assert detector_candidates_hc(s1, empty, 6) == []
    assert detector_candidates_hc(empty, Sketch(s1.config), 1) == []


def test_controller_aggregate():
    lists = [[CandidateTuple(A, 5)], [CandidateTuple(A, 4)], []]
    assert controller_aggregate(lists, 9).entries == ((A, 9),)
    assert controller_aggregate([[CandidateTuple(A, 5)], [CandidateTuple(B, 4)]], 9).entries == ()
    assert controller_aggregate([[], []], 1).entries == ()


def test_single_detector_degenerate_case_matches_local_hc():
    # q = d = 1: the protocol collapses to plain heavy changer detection
    tr0, _ = traffic.gen_zipf(200, 5000, 1.2, "unit", seed=4, epoch=0)
    tr1, _ = traffic.gen_zipf(200, 5000, 1.2, "unit", seed=4, epoch=1)
    cfg = SketchConfig(rows=2, cols=64, key_bytes=8, seed=1)
    s0, s1 = build(cfg, tr0), build(cfg, tr1)
    threshold = 300
    local = detect_heavy_changers(s0, s1, threshold)
    protocol = controller_aggregate(
        [detector_candidates_hc(s0, s1, threshold)], threshold
    )
    assert protocol.entries == local.entries


def test_scalable_config_validation():
    with pytest.raises(ValueError):
        ScalableConfig(q=3, d=4)
    with pytest.raises(ValueError):
        ScalableConfig(q=0, d=0)


# -- merge ---------------------------------------------------------------------


def test_merge_identity():
    s = loaded_bucket()
    assert merge([s]) == s


def test_merge_hand_example():
    cfg = SketchConfig(rows=1, cols=1, key_bytes=8, seed=1)
    s1 = loaded_bucket()  # (V=6, K=A, C=4)
    s2 = Sketch(cfg)
    s2.update(B, 3)  # (V=3, K=B, C=3)
    m = merge([s1, s2])
    assert m.bucket(0, 0) == (9, A, 1)
    assert m.total == 9


def test_merge_empties():
    cfg = SketchConfig(rows=2, cols=4, key_bytes=8, seed=5)
    m = merge([Sketch(cfg), Sketch(cfg), Sketch(cfg)])
    assert m == Sketch(cfg)


def test_merge_rejects_mismatch_and_empty_list():
    with pytest.raises(ValueError):
        merge([])
    a = Sketch(SketchConfig(rows=1, cols=4, key_bytes=8, seed=1))
    b = Sketch(SketchConfig(rows=1, cols=4, key_bytes=8, seed=2))
    with pytest.raises(ValueError):
        merge([a, b])


def test_merge_tie_breaks_to_smallest_key():
    cfg = SketchConfig(rows=1, cols=1, key_bytes=8, seed=1)
    s1 = Sketch(cfg)
    s1.update(B, 2)  # e(B) = 2 from s1, 0 from s2
    s2 = Sketch(cfg)
    s2.update(A, 2)  # e(A) = 2 from s2, 0 from s1
    m = merge([s1, s2])
    assert m.bucket(0, 0).key == A  # bytewise smaller key wins the tie
    assert merge([s2, s1]) == m  # order of inputs cannot matter


def test_merge_empty_slot_is_not_a_candidate():
    # an untouched bucket's all-zero key must not beat a real candidate
    cfg = SketchConfig(rows=1, cols=1, key_bytes=8, seed=1)
    s1 = Sketch(cfg)
    s1.update(A, 1)
    s1.update(B, 1)  # (V=2, K=A, C=0): e(A) = 1
    s2 = Sketch(cfg)  # untouched
    m = merge([s1, s2])
    assert m.bucket(0, 0).key == A


def partitioned_sketches(seed: int, q: int, cols: int = 64):
    tr, table = traffic.gen_zipf(300, 8000, 1.2, "unit", seed=seed)
    cfg = SketchConfig(rows=3, cols=cols, key_bytes=8, seed=2)
    parts = traffic.partition(tr, NetworkWidePolicy(q, seed=seed + 1))
    sketches = [build(cfg, p) for p in parts]
    return tr, table, cfg, sketches


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_merge_conservation(seed):
    tr, _, _, sketches = partitioned_sketches(seed, q=4)
    m = merge(sketches)
    stacked = np.stack([s._sums for s in sketches]).sum(axis=0)
    assert np.array_equal(m._sums, stacked)
    assert m.total == sum(s.total for s in sketches) == len(tr)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_merged_bounds_hold_against_union_oracle(seed):
    tr, table_dict, cfg, sketches = partitioned_sketches(seed, q=4)
    m = merge(sketches)
    table = oracle.exact_counts(tr)
    upper, lower = m.bounds_batch(table.keys_lo, table.keys_hi)
    assert (lower.astype(np.int64) <= table.values).all()
    assert (table.values <= upper.astype(np.int64)).all()


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_merged_majority_tracking(seed):
    # a union-stream majority flow must be the merged bucket's candidate,
    # however the traffic was split
    tr, _, cfg, sketches = partitioned_sketches(seed, q=4)
    m = merge(sketches)
    table = oracle.exact_counts(tr)
    majorities = oracle.bucket_majorities(table, cfg)
    for row, row_map in enumerate(majorities):
        for col, (lo, hi) in row_map.items():
            assert int(m._keys_lo[row, col]) == lo
            assert int(m._keys_hi[row, col]) == hi


def test_network_wide_report_parity_or_bound_guarantees():
    # merging keeps the guarantees of a single whole-stream sketch, not
    # its bit-level state: candidate votes settle to bound-equivalent
    # (not identical) counters. On some seeds the reports coincide
    # exactly; on the rest the merged sketch must still satisfy the
    # union-stream bounds and majority tracking.
    exact_matches = 0
    for seed in range(12):
        tr, _, cfg, sketches = partitioned_sketches(seed, q=4)
        m = merge(sketches)
        whole = build(cfg, tr)
        table = oracle.exact_counts(tr)
        threshold = oracle.threshold_for_target(table, 20)
        merged_report = detect_heavy_hitters(m, threshold)
        whole_report = detect_heavy_hitters(whole, threshold)
        if merged_report.entries == whole_report.entries:
            exact_matches += 1
            continue
        upper, lower = m.bounds_batch(table.keys_lo, table.keys_hi)
        assert (lower.astype(np.int64) <= table.values).all()
        assert (table.values <= upper.astype(np.int64)).all()
        for row, row_map in enumerate(oracle.bucket_majorities(table, cfg)):
            for col, (lo, hi) in row_map.items():
                assert int(m._keys_lo[row, col]) == lo
                assert int(m._keys_hi[row, col]) == hi
    assert exact_matches >= 1
