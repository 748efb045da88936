"""Core sketch behavior: the update/query rules, invariants, and the
scalar/batch equivalence."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvsketch.sketch import (
    MAX_TOTAL,
    Sketch,
    SketchConfig,
    cols_for_memory,
    params_from_error,
)

A = (0x0A).to_bytes(8, "little")
B = (0x0B).to_bytes(8, "little")


def one_bucket() -> Sketch:
    return Sketch(SketchConfig(rows=1, cols=1, key_bytes=8, seed=1))


# -- construction ---------------------------------------------------------------


def test_new_sketch_is_zero():
    s = Sketch(SketchConfig(rows=4, cols=1024, key_bytes=8, seed=1))
    assert s.total == 0
    assert not s._sums.any() and not s._votes.any()
    assert not s._keys_lo.any() and not s._keys_hi.any()


def test_hardware_shape_config():
    s = Sketch(SketchConfig(rows=1, cols=2048, key_bytes=4, seed=7))
    assert s._sums.shape == (1, 2048)


@pytest.mark.parametrize(
    "rows,cols,key_bytes",
    [(0, 8, 8), (4, 0, 8), (4, 8, 0), (4, 8, 17), (-1, 8, 8)],
)
def test_invalid_config_rejected(rows, cols, key_bytes):
    with pytest.raises(ValueError):
        SketchConfig(rows=rows, cols=cols, key_bytes=key_bytes, seed=1)


def test_params_from_error():
    assert params_from_error(0.5, 0.5) == (1, 4)
    assert params_from_error(0.001, 0.0625) == (4, 2000)
    with pytest.raises(ValueError):
        params_from_error(1.5, 0.5)
    with pytest.raises(ValueError):
        params_from_error(0.5, 0.0)


def test_cols_for_memory():
    # bucket is 16 + key_bytes, padding excluded
    assert cols_for_memory(256 * 1024, 4, 8) == (256 * 1024) // (4 * 24)
    assert cols_for_memory(96, 4, 8) == 1
    with pytest.raises(ValueError):
        cols_for_memory(95, 4, 8)


# -- update rule ----------------------------------------------------------------


def test_first_insertion_takes_over():
    s = one_bucket()
    s.update(A, 3)
    assert s.bucket(0, 0) == (3, A, 3)


def test_update_sequence_majority_vote():
    s = one_bucket()
    for k, v in ((A, 3), (B, 1), (A, 2)):
        s.update(k, v)
    assert s.bucket(0, 0) == (6, A, 4)
    assert s.total == 6


def test_decrement_to_zero_keeps_candidate():
    s = one_bucket()
    s.update(A, 1)
    s.update(B, 1)
    assert s.bucket(0, 0) == (2, A, 0)


def test_zero_value_update_is_noop():
    s = one_bucket()
    s.update(A, 0)
    assert s.bucket(0, 0) == (0, bytes(8), 0)
    assert s.total == 0


def test_zero_key_flow_behaves_like_any_key():
    zero = bytes(8)
    s = one_bucket()
    s.update(zero, 5)
    s.update(A, 2)
    assert s.bucket(0, 0) == (7, zero, 3)
    assert s.query(zero) == 5
    lo, hi = s.stored_keys()
    assert len(lo) == 1 and int(lo[0]) == 0 and int(hi[0]) == 0


def test_update_validates_inputs():
    s = one_bucket()
    with pytest.raises(ValueError):
        s.update(b"\x01", 1)  # wrong width
    with pytest.raises(ValueError):
        s.update(A, -1)


def test_overflow_is_hard_error():
    s = one_bucket()
    s.update(A, MAX_TOTAL)
    with pytest.raises(OverflowError):
        s.update(B, 1)
    assert s.total == MAX_TOTAL  # unchanged after the failed update


def test_batch_overflow_is_hard_error():
    s = one_bucket()
    s.update(A, MAX_TOTAL - 1)
    lo = np.asarray([0x0B, 0x0B], dtype=np.uint64)
    hi = np.zeros(2, dtype=np.uint64)
    with pytest.raises(OverflowError):
        s.update_batch(lo, hi, np.asarray([1, 1], dtype=np.uint64))


# -- query and bounds -------------------------------------------------------------


def test_query_examples():
    s = one_bucket()
    for k, v in ((A, 3), (B, 1), (A, 2)):
        s.update(k, v)
    assert s.query(A) == 5  # (6+4)/2, exact here
    assert s.query(B) == 1  # (6-4)/2, exact here


def test_query_empty_sketch_is_zero():
    s = Sketch(SketchConfig(rows=3, cols=16, key_bytes=8, seed=2))
    assert s.query(A) == 0
    est = s.bounds(A)
    assert (est.point, est.upper, est.lower) == (0, 0, 0)


def test_bounds_examples():
    s = one_bucket()
    for k, v in ((A, 3), (B, 1), (A, 2)):
        s.update(k, v)
    ea = s.bounds(A)
    assert (ea.point, ea.upper, ea.lower) == (5, 5, 4)
    eb = s.bounds(B)
    assert (eb.point, eb.upper, eb.lower) == (1, 1, 0)


def test_query_never_inserted_key_defined():
    s = one_bucket()
    s.update(A, 10)
    # collision in the single bucket inflates the estimate; still >= 0
    assert s.query(B) == 5


# -- properties ---------------------------------------------------------------------


def small_streams():
    keys = st.integers(min_value=0, max_value=7)
    values = st.integers(min_value=0, max_value=50)
    return st.lists(st.tuples(keys, values), max_size=200)


@given(stream=small_streams(), seed=st.integers(min_value=0, max_value=2**32))
@settings(max_examples=150, deadline=None)
def test_bucket_invariants_and_conservation(stream, seed):
    s = Sketch(SketchConfig(rows=3, cols=4, key_bytes=8, seed=seed))
    for k, v in stream:
        s.update(k.to_bytes(8, "little"), v)
    # 0 <= votes <= value_sum, value_sum + votes even
    assert (s._votes <= s._sums).all()
    assert (((s._sums + s._votes) % np.uint64(2)) == 0).all()
    # every row conserves the stream total
    assert (s._sums.sum(axis=1) == np.uint64(s.total)).all()
    assert s.total == sum(v for _, v in stream)


@given(stream=small_streams(), seed=st.integers(min_value=0, max_value=2**32))
@settings(max_examples=150, deadline=None)
def test_no_underestimation_and_bounds_sandwich(stream, seed):
    s = Sketch(SketchConfig(rows=2, cols=4, key_bytes=8, seed=seed))
    exact: dict[int, int] = {}
    for k, v in stream:
        s.update(k.to_bytes(8, "little"), v)
        exact[k] = exact.get(k, 0) + v
    for k, true_sum in exact.items():
        est = s.bounds(k.to_bytes(8, "little"))
        assert est.lower <= true_sum <= est.upper
        assert est.point == est.upper == s.query(k.to_bytes(8, "little"))


@given(stream=small_streams(), seed=st.integers(min_value=0, max_value=2**32))
@settings(max_examples=100, deadline=None)
def test_majority_flow_is_stored(stream, seed):
    # any flow holding more than half a bucket's mass must end up as
    # that bucket's candidate
    cfg = SketchConfig(rows=2, cols=4, key_bytes=8, seed=seed)
    s = Sketch(cfg)
    exact: dict[int, int] = {}
    for k, v in stream:
        s.update(k.to_bytes(8, "little"), v)
        exact[k] = exact.get(k, 0) + v
    for row in range(cfg.rows):
        per_col: dict[int, dict[int, int]] = {}
        for k, true_sum in exact.items():
            col = s.hash_row(row, k.to_bytes(8, "little"))
            per_col.setdefault(col, {})[k] = true_sum
        for col, flows in per_col.items():
            col_total = sum(flows.values())
            for k, true_sum in flows.items():
                if 2 * true_sum > col_total:
                    assert s.bucket(row, col).key == k.to_bytes(8, "little")


@given(stream=small_streams(), seed=st.integers(min_value=0, max_value=2**32))
@settings(max_examples=100, deadline=None)
def test_determinism(stream, seed):
    cfg = SketchConfig(rows=2, cols=8, key_bytes=8, seed=seed)
    s1 = Sketch(cfg)
    s2 = Sketch(cfg)
    for k, v in stream:
        s1.update(k.to_bytes(8, "little"), v)
        s2.update(k.to_bytes(8, "little"), v)
    assert s1 == s2


@given(stream=small_streams(), seed=st.integers(min_value=0, max_value=2**32))
@settings(max_examples=100, deadline=None)
def test_batch_equals_scalar(stream, seed):
    cfg = SketchConfig(rows=3, cols=5, key_bytes=8, seed=seed)
    scalar = Sketch(cfg)
    for k, v in stream:
        scalar.update(k.to_bytes(8, "little"), v)
    batch = Sketch(cfg)
    if stream:
        lo = np.asarray([k for k, _ in stream], dtype=np.uint64)
        hi = np.zeros(len(stream), dtype=np.uint64)
        vals = np.asarray([v for _, v in stream], dtype=np.uint64)
        batch.update_batch(lo, hi, vals)
    assert scalar == batch
    # query paths agree as well
    for k in {k for k, _ in stream}:
        lo = np.asarray([k], dtype=np.uint64)
        hi = np.zeros(1, dtype=np.uint64)
        assert scalar.query(k.to_bytes(8, "little")) == int(batch.query_batch(lo, hi)[0])
        upper, lower = batch.bounds_batch(lo, hi)
        est = scalar.bounds(k.to_bytes(8, "little"))
        assert (est.upper, est.lower) == (int(upper[0]), int(lower[0]))


def test_wide_keys_round_trip_through_buckets():
    s = Sketch(SketchConfig(rows=2, cols=4, key_bytes=13, seed=3))
    k = bytes(range(10, 23))
    s.update(k, 9)
    assert s.query(k) == 9
    row0 = s.hash_row(0, k)
    assert s.bucket(0, row0).key == k


def test_copy_is_independent():
    s = one_bucket()
    s.update(A, 3)
    dup = s.copy()
    dup.update(A, 1)
    assert s.total == 3 and dup.total == 4
    assert s != dup
