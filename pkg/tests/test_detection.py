"""Heavy-hitter and heavy-changer recovery."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvsketch.detection import (
    detect_heavy_changers,
    detect_heavy_hitters,
    estimated_max_change,
    read_key_estimate_csv,
    write_report_csv,
)
from mvsketch.sketch import Sketch, SketchConfig

A = (0x0A).to_bytes(8, "little")
B = (0x0B).to_bytes(8, "little")


def loaded_bucket() -> Sketch:
    s = Sketch(SketchConfig(rows=1, cols=1, key_bytes=8, seed=1))
    for k, v in ((A, 3), (B, 1), (A, 2)):
        s.update(k, v)
    return s


def test_hh_empty_sketch():
    s = Sketch(SketchConfig(rows=2, cols=8, key_bytes=8, seed=1))
    assert detect_heavy_hitters(s, 1).entries == ()


def test_hh_basic():
    s = loaded_bucket()
    assert detect_heavy_hitters(s, 4).entries == ((A, 5),)
    # bucket pre-filter: value_sum 6 < 7
    assert detect_heavy_hitters(s, 7).entries == ()


def test_hh_report_invariants():
    s = Sketch(SketchConfig(rows=2, cols=4, key_bytes=8, seed=3))
    rng = np.random.default_rng(0)
    for _ in range(500):
        s.update(int(rng.integers(0, 10)).to_bytes(8, "little"), int(rng.integers(1, 9)))
    report = detect_heavy_hitters(s, 50)
    keys = [k for k, _ in report.entries]
    assert len(keys) == len(set(keys))  # unique
    assert all(est >= 50 for _, est in report.entries)
    ests = [e for _, e in report.entries]
    assert ests == sorted(ests, reverse=True)
    for (k1, e1), (k2, e2) in zip(report.entries, report.entries[1:]):
        if e1 == e2:
            assert k1 < k2  # key ascending inside ties


def test_hh_never_understates_true_heavy():
    # every reported estimate of a truly inserted flow >= its true sum
    s = Sketch(SketchConfig(rows=2, cols=4, key_bytes=8, seed=3))
    exact = {}
    rng = np.random.default_rng(1)
    for _ in range(300):
        k, v = int(rng.integers(0, 12)), int(rng.integers(1, 7))
        s.update(k.to_bytes(8, "little"), v)
        exact[k] = exact.get(k, 0) + v
    report = detect_heavy_hitters(s, 30)
    for key, est in report.entries:
        true = exact.get(int.from_bytes(key, "little"), 0)
        assert est >= true


def test_dhat_against_empty_epoch():
    s1 = loaded_bucket()
    s2 = Sketch(s1.config)
    assert estimated_max_change(s1, s2, A).dhat == 5  # max(|5-0|, |4-0|)
    assert estimated_max_change(s2, s2, A).dhat == 0


def test_dhat_identical_sketches_gap():
    s = loaded_bucket()
    est = s.bounds(A)
    d = estimated_max_change(s, s, A).dhat
    assert d == est.upper - est.lower
    assert d >= 0


def test_hc_basic():
    s1 = loaded_bucket()
    s2 = Sketch(s1.config)
    assert detect_heavy_changers(s1, s2, 5).entries == ((A, 5),)
    assert detect_heavy_changers(s1, s2, 6).entries == ()


def test_hc_same_stream_above_gap_is_empty():
    # two sketches of the same stream: any threshold above the largest
    # upper-lower gap among stored keys reports nothing
    s = Sketch(SketchConfig(rows=2, cols=4, key_bytes=8, seed=7))
    rng = np.random.default_rng(2)
    for _ in range(400):
        s.update(int(rng.integers(0, 10)).to_bytes(8, "little"), int(rng.integers(1, 6)))
    twin = Sketch.from_bytes(s.to_bytes())
    lo, hi = s.stored_keys()
    upper, lower = s.bounds_batch(lo, hi)
    max_gap = int((upper - lower).max())
    assert detect_heavy_changers(s, twin, max_gap + 1).entries == ()


def test_config_mismatch_rejected():
    s1 = Sketch(SketchConfig(rows=1, cols=4, key_bytes=8, seed=1))
    s2 = Sketch(SketchConfig(rows=1, cols=4, key_bytes=8, seed=2))
    with pytest.raises(ValueError):
        estimated_max_change(s1, s2, A)
    with pytest.raises(ValueError):
        detect_heavy_changers(s1, s2, 5)


def test_threshold_must_be_positive():
    s = loaded_bucket()
    with pytest.raises(ValueError):
        detect_heavy_hitters(s, 0)
    with pytest.raises(ValueError):
        detect_heavy_changers(s, Sketch(s.config), 0)


def small_streams():
    keys = st.integers(min_value=0, max_value=9)
    values = st.integers(min_value=1, max_value=40)
    return st.lists(st.tuples(keys, values), max_size=120)


@given(
    s1=small_streams(), s2=small_streams(), seed=st.integers(min_value=0, max_value=2**32)
)
@settings(max_examples=100, deadline=None)
def test_change_never_underestimated(s1, s2, seed):
    cfg = SketchConfig(rows=2, cols=3, key_bytes=8, seed=seed)
    a = Sketch(cfg)
    b = Sketch(cfg)
    e1: dict[int, int] = {}
    e2: dict[int, int] = {}
    for k, v in s1:
        a.update(k.to_bytes(8, "little"), v)
        e1[k] = e1.get(k, 0) + v
    for k, v in s2:
        b.update(k.to_bytes(8, "little"), v)
        e2[k] = e2.get(k, 0) + v
    for k in set(e1) | set(e2):
        true_change = abs(e1.get(k, 0) - e2.get(k, 0))
        assert estimated_max_change(a, b, k.to_bytes(8, "little")).dhat >= true_change


def test_report_csv_round_trip(tmp_path):
    report = detect_heavy_hitters(loaded_bucket(), 4)
    path = tmp_path / "report.csv"
    write_report_csv(report, path)
    assert path.read_text() == f"key_hex,estimate\n{A.hex()},5\n"
    assert read_key_estimate_csv(path) == [(A, 5)]
