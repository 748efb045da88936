"""Brute-force ground truth: exact counts, changes, heavy sets, and
per-bucket majority flows."""

import numpy as np
import pytest

from mvsketch import oracle, traffic
from mvsketch.sketch import SketchConfig
from mvsketch.traffic import PacketRecord, Trace


def trace_of(pairs, key_bytes=8, epoch=0) -> Trace:
    recs = [
        PacketRecord(epoch, k.to_bytes(key_bytes, "little"), v) for k, v in pairs
    ]
    return Trace.from_records(recs, key_bytes)


A, B, C = 0x0A, 0x0B, 0x0C


def k8(n):
    return n.to_bytes(8, "little")


def test_exact_counts():
    table = oracle.exact_counts(trace_of([(A, 3), (B, 1), (A, 2)]))
    assert table.as_dict() == {k8(A): 5, k8(B): 1}
    assert table.total == 6


def test_exact_counts_empty():
    table = oracle.exact_counts(Trace.empty(8))
    assert table.as_dict() == {}
    assert table.total == 0


def test_exact_changes():
    t1 = oracle.exact_counts(trace_of([(A, 5), (B, 1)]))
    t2 = oracle.exact_counts(trace_of([(A, 2), (C, 4)]))
    ch = oracle.exact_changes(t1, t2)
    assert ch.as_dict() == {k8(A): 3, k8(B): 1, k8(C): 4}
    assert ch.total == 8
    assert ch.epoch_totals == (6, 6)


def test_exact_changes_against_empty():
    t1 = oracle.exact_counts(trace_of([(A, 5)]))
    t2 = oracle.exact_counts(Trace.empty(8))
    ch = oracle.exact_changes(t1, t2)
    assert ch.as_dict() == {k8(A): 5}
    assert ch.total == 5


def test_exact_changes_identical_tables():
    t = oracle.exact_counts(trace_of([(A, 5), (B, 1)]))
    ch = oracle.exact_changes(t, t)
    assert set(ch.as_dict().values()) == {0}
    assert ch.total == 0


def test_true_heavy():
    table = oracle.exact_counts(trace_of([(A, 5), (B, 1)]))
    assert oracle.true_heavy(table, 0.5) == {k8(A)}
    assert oracle.true_heavy(table, 1.0) == set()
    assert oracle.true_heavy(table, 1e-9) == {k8(A), k8(B)}


def test_true_heavy_single_flow_at_phi_one():
    table = oracle.exact_counts(trace_of([(A, 5)]))
    assert oracle.true_heavy(table, 1.0) == {k8(A)}


def test_threshold_for_target():
    table = oracle.exact_counts(trace_of([(A, 9), (B, 5), (C, 2)]))
    assert oracle.threshold_for_target(table, 1) == 9
    assert oracle.threshold_for_target(table, 2) == 5
    assert oracle.threshold_for_target(table, 10) == 2  # fewer flows than target
    assert oracle.threshold_for_target(oracle.exact_counts(Trace.empty(8)), 3) == 1


def test_bucket_majority_single_flow():
    cfg = SketchConfig(rows=1, cols=1, key_bytes=8, seed=1)
    tr = trace_of([(A, 4)])
    assert oracle.bucket_majority(tr, cfg, 0, 0) == k8(A)


def test_bucket_majority_strict():
    cfg = SketchConfig(rows=1, cols=1, key_bytes=8, seed=1)
    assert oracle.bucket_majority(trace_of([(A, 3), (B, 1), (A, 2)]), cfg, 0, 0) == k8(A)
    # exactly half is not a majority
    assert oracle.bucket_majority(trace_of([(A, 2), (B, 2)]), cfg, 0, 0) is None


def test_generator_table_matches_recount():
    tr, table = traffic.gen_zipf(500, 20_000, 1.2, "sizes", seed=9)
    assert oracle.exact_counts(tr).as_dict() == table


def test_table_csv_round_trip(tmp_path):
    table = oracle.exact_counts(trace_of([(A, 5), (B, 1)]))
    path = tmp_path / "truth.csv"
    oracle.write_table_csv(table, path)
    back = oracle.read_table_csv(path)
    assert back.as_dict() == table.as_dict()
    assert back.total == table.total


def test_table_csv_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("nope\n")
    with pytest.raises(ValueError):
        oracle.read_table_csv(path)


def test_phi_out_of_range():
    table = oracle.exact_counts(trace_of([(A, 5)]))
    with pytest.raises(ValueError):
        oracle.true_heavy(table, 0.0)
    with pytest.raises(ValueError):
        oracle.true_heavy(table, 1.5)
