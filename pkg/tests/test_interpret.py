from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_trace
from provts.errors import InvalidConfig, SchemaMismatch, TraceTooShort
from provts.interpret import (
    UNCERTAIN,
    AnnotateConfig,
    Segment,
    TimelineAnnotation,
    annotate,
    growing_windows,
    merge_segments,
    spans_from_windows,
    window_ends,
)
from provts.transform import STATISTICS
from provts.types import schema_for


class _StubModel:
    """Predicts from the window length so the expected timeline is known."""

    kind, scale, series_length, statistics = "stub", "space", 100, tuple(STATISTICS)

    def __init__(self, rule, env="immersive"):
        self.rule = rule
        self.raw_schema = schema_for(env)
        self.seen = []

    def predict_with_confidence(self, windows):
        self.seen.append(windows.shape)
        codes, conf = zip(*(self.rule(i) for i in range(windows.shape[0])))
        return np.array(codes), np.array(conf, dtype=float)


def test_window_examples():
    assert window_ends(100) == [100]
    assert window_ends(160, 100, 30) == [100, 130, 160]
    assert window_ends(170, 100, 30) == [100, 130, 160, 170]
    with pytest.raises(TraceTooShort):
        window_ends(99)
    with pytest.raises(InvalidConfig):
        window_ends(200, 100, 0)
    wins = growing_windows(make_trace(160), 100, 30)
    assert [len(w) for w in wins] == [100, 130, 160]
    np.testing.assert_array_equal(wins[1].values, make_trace(160).values[:130])


@given(st.integers(1, 400), st.integers(1, 150), st.integers(1, 60))
def test_windows_grow_to_full_length(T, start, step):
    if T < start:
        with pytest.raises(TraceTooShort):
            window_ends(T, start, step)
        return
    ends = window_ends(T, start, step)
    assert ends[0] == start and ends[-1] == T
    assert all(0 < b - a <= step for a, b in zip(ends, ends[1:]))


def _fuzz_timeline(seed):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, 400))
    ts = np.cumsum(rng.uniform(0.001, 0.2, T))
    start = int(rng.integers(1, T + 1))
    ends = window_ends(T, start, int(rng.integers(1, 50)))
    codes = rng.choice([0, 1, 2, 15, 23], len(ends))
    conf = rng.uniform(-0.2, 1.2, len(ends))
    segs = spans_from_windows(ts, ends, codes, conf, float(rng.uniform(0, 1)))
    return TimelineAnnotation("fuzz", "m", segs, float(ts[0]), float(ts[-1])), T


@pytest.mark.parametrize("seed", range(100))
def test_fuzzed_timelines_cover_session(seed):
    tl, T = _fuzz_timeline(seed)
    tl.validate()
    assert tl.segments[0].frame_start == 0 and tl.segments[-1].frame_end == T
    assert all(a.code != b.code for a, b in zip(tl.segments, tl.segments[1:]))


@given(st.integers(0, 2**32 - 1))
def test_merge_is_idempotent(seed):
    tl, _ = _fuzz_timeline(seed)
    once = merge_segments(tl.segments)
    assert merge_segments(once) == once


def test_merge_weights_confidence_by_frames():
    segs = [Segment(0.0, 1.0, 3, 0.9, 0, 30), Segment(1.0, 2.0, 3, 0.6, 30, 90), Segment(2.0, 3.0, 4, 0.7, 90, 100)]
    out = merge_segments(segs)
    assert [s.code for s in out] == [3, 4]
    assert out[0].confidence == pytest.approx((0.9 * 30 + 0.6 * 60) / 90)
    assert (out[0].frame_start, out[0].frame_end, out[0].t_end_s) == (0, 90, 2.0)


def test_validate_rejects_broken_timelines():
    good = [Segment(0.0, 1.0, 1, 0.9, 0, 10), Segment(1.0, 2.0, 2, 0.9, 10, 20)]
    TimelineAnnotation("t", "m", good, 0.0, 2.0).validate()
    bad = [
        ([], 0.0, 2.0),
        (good, 0.0, 3.0),
        ([good[0], Segment(1.5, 2.0, 2, 0.9, 10, 20)], 0.0, 2.0),
        ([good[0], Segment(1.0, 2.0, 2, 1.5, 10, 20)], 0.0, 2.0),
    ]
    for segs, t0, t1 in bad:
        with pytest.raises(ValueError):
            TimelineAnnotation("t", "m", segs, t0, t1).validate()


def test_homogeneous_trace_is_one_segment():
    trace = make_trace(400, None)
    ann = annotate(trace, _StubModel(lambda i: (12, 0.9)), AnnotateConfig(step=30))
    assert [(s.code, s.frame_start, s.frame_end) for s in ann.segments] == [(12, 0, 400)]
    ann.validate()


def test_low_confidence_is_single_uncertain_segment():
    trace = make_trace(300, None)
    ann = annotate(trace, _StubModel(lambda i: (i % 3, 0.2)), AnnotateConfig(step=25, threshold=0.5))
    assert [s.code for s in ann.segments] == [UNCERTAIN]
    assert ann.dominant(0.0, 10.0) == UNCERTAIN
    assert ann.dominant(0.0, 10.0, include_uncertain=True) == UNCERTAIN


def test_window_predictions_credit_added_frames():
    trace = make_trace(190, None, rate=10.0)
    model = _StubModel(lambda i: ((1, 0.9), (1, 0.8), (2, 0.9), (2, 0.3))[i])
    ann = annotate(trace, model, AnnotateConfig(step=30))
    assert model.seen == [(4, 100, 108)]  # windows end at 100, 130, 160, 190
    assert [(s.code, s.frame_start, s.frame_end) for s in ann.segments] == [(1, 0, 130), (2, 130, 160), (-1, 160, 190)]
    assert ann.code_at(0.0) == 1 and ann.code_at(14.0) == 2 and ann.code_at(100.0) == UNCERTAIN
    assert ann.dominant(0.0, 18.9) == 1
    assert ann.coverage(12.0, 15.0) == pytest.approx({1: 1.0, 2: 2.0})


def test_default_step_is_one_second():
    trace = make_trace(200, None, rate=20.0)
    model = _StubModel(lambda i: (0, 1.0))
    annotate(trace, model)
    assert model.seen == [(6, 100, 108)]  # 100, 120, ..., 200


def test_dominant_ties_go_to_smaller_code():
    segs = [Segment(0.0, 1.0, 7, 0.9, 0, 10), Segment(1.0, 2.0, 3, 0.9, 10, 20)]
    tl = TimelineAnnotation("t", "m", segs, 0.0, 2.0)
    assert tl.dominant(0.0, 2.0) == 3
    assert tl.dominant(0.5, 2.0) == 3 and tl.dominant(0.0, 1.5) == 7


def test_schema_mismatch_and_short_trace():
    with pytest.raises(SchemaMismatch):
        annotate(make_trace(200, None), _StubModel(lambda i: (0, 1.0), env="desktop"))
    with pytest.raises(TraceTooShort):
        annotate(make_trace(50, None), _StubModel(lambda i: (0, 1.0)))
    with pytest.raises(InvalidConfig):
        AnnotateConfig(threshold=1.5)


def test_reports_are_deterministic(tmp_path):
    trace = make_trace(260, None, seed=4)
    rule = lambda i: (i % 2, 0.4 + 0.1 * i)  # noqa: E731
    a = annotate(trace, _StubModel(rule), AnnotateConfig(step=20))
    b = annotate(trace, _StubModel(rule), AnnotateConfig(step=20))
    pa, pb = a.save(tmp_path / "a"), b.save(tmp_path / "b")
    assert [p.name for p in pa] == ["timeline_p0.json", "timeline_p0.csv", "timeline_p0.svg"]
    for x, y in zip(pa, pb):
        assert x.read_bytes() == y.read_bytes()
    doc = json.loads(pa[0].read_text())
    assert doc["segments"][0]["frame_start"] == 0 and doc["segments"][-1]["frame_end"] == 260
    assert pa[1].read_text().splitlines()[0] == "t_start_s,t_end_s,code,confidence,frame_start,frame_end"
    svg = pa[2].read_text()
    assert svg.startswith("<svg") and "polyline" in svg and "uncertain" in svg
