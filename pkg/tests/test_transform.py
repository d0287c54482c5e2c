from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import make_trace
from provts.errors import InvalidConfig, SchemaMismatch
from provts.transform import (
    MinMaxNormalizer,
    TransformConfig,
    build_dataset,
    derived_feature_names,
    load_tensor,
    save_tensor,
    segment_accumulate,
    segment_bounds,
    segment_stats,
    sort_traces,
    transform_trace,
)
from provts.types import schema_for


def test_uniform_partition_sums():
    out = segment_accumulate(np.ones((10, 2)), 5)
    np.testing.assert_array_equal(out, np.full((5, 2), 2.0))


def test_short_trace_has_empty_segments():
    out = segment_accumulate(np.arange(1.0, 4.0)[:, None], 5)
    assert int(np.sum(np.all(out == 0, axis=1))) == 2
    # boundaries ceil(3k/5) = 0,1,2,2,3,3
    np.testing.assert_array_equal(segment_bounds(3, 5), [0, 1, 2, 2, 3, 3])


def test_total_sum_conserved_on_random_trace():
    x = np.random.default_rng(0).normal(size=(237, 4))
    assert segment_accumulate(x, 100).sum() == pytest.approx(x.sum(), rel=1e-12)


def test_segment_mean_and_std():
    np.testing.assert_allclose(segment_stats(np.array([1.0, 3.0]), 1), [[2.0, 1.0]])
    np.testing.assert_allclose(segment_stats(np.array([5.0, 5.0, 5.0]), 1), [[5.0, 0.0]])
    out = segment_stats(np.array([7.0]), 3)
    # bounds ceil(k/3) = 0,1,1,1: the frame lands in segment 0, the rest are empty
    np.testing.assert_array_equal(out[0], [7.0, 0.0])
    np.testing.assert_array_equal(out[1:], 0.0)


def test_statistic_major_layout():
    x = np.array([[1.0, 10.0], [3.0, 30.0]])
    out = transform_trace(x, TransformConfig(l=1))
    np.testing.assert_allclose(out, [[4.0, 40.0, 2.0, 20.0, 1.0, 10.0]])
    names = derived_feature_names(schema_for("desktop"))
    assert names[0] == "evt.click:sum" and names[12] == "evt.click:mean" and names[24] == "evt.click:std"


def test_minmax_examples():
    col = np.array([[-2.0], [6.0], [2.0]])
    norm = MinMaxNormalizer.fit(col)
    assert (norm.mins[0], norm.maxs[0]) == (-2.0, 6.0)
    assert norm.apply(np.array([[2.0]]))[0, 0] == 0.5
    assert norm.apply(np.array([[9.0]]))[0, 0] == 1.0
    flat = MinMaxNormalizer.fit(np.full((4, 1), 3.0))
    np.testing.assert_array_equal(flat.apply(np.array([[3.0], [5.0]])), 0.0)
    again = MinMaxNormalizer.from_params(norm.params())
    np.testing.assert_array_equal(again.apply(col), norm.apply(col))


def test_minmax_width_check():
    with pytest.raises(SchemaMismatch):
        MinMaxNormalizer.fit(np.zeros((3, 2))).apply(np.zeros((3, 3)))


def test_build_dataset_desktop_shape():
    traces = [make_trace(40 + i, 11, pid=f"p{i}", env="desktop", rate=10.0, seed=i) for i in range(20)]
    tensor = build_dataset(traces)
    assert tensor.shape == (20, 100, 36)
    assert 0.0 <= tensor.normalized().min() and tensor.normalized().max() <= 1.0


def test_build_dataset_empty():
    tensor = build_dataset([])
    assert tensor.shape == (0, 100, 108)
    assert tensor.normalized().shape == (0, 100, 108)


def test_sorted_input_gives_identical_tensor():
    traces = [make_trace(30 + i, 2, pid=f"p{i % 3}", trial=i, seed=i) for i in range(6)]
    shuffled = traces[:]
    random.Random(1).shuffle(shuffled)
    a = build_dataset(sort_traces(traces))
    b = build_dataset(sort_traces(shuffled))
    np.testing.assert_array_equal(a.data, b.data)
    assert a.trace_keys == b.trace_keys


def test_unlabeled_traces_get_minus_one():
    tensor = build_dataset([make_trace(20, None), make_trace(20, 25, pid="q")])
    assert tensor.labels("task").tolist() == [-1, 25]
    assert tensor.labels("space").tolist() == [-1, 2]


def test_config_validation():
    with pytest.raises(InvalidConfig):
        TransformConfig(l=0)
    with pytest.raises(InvalidConfig):
        TransformConfig(statistics=("median",))
    with pytest.raises(InvalidConfig):
        TransformConfig(statistics=())


def test_tensor_roundtrip(tmp_path):
    tensor = build_dataset([make_trace(50, 2), make_trace(70, 15, pid="b", seed=1)])
    save_tensor(tensor, tmp_path / "t.bin")
    back = load_tensor(tmp_path / "t.bin")
    np.testing.assert_allclose(back.data, tensor.data, rtol=1e-6, atol=1e-6)
    assert back.schema_hash == tensor.schema_hash
    assert back.trace_keys == tensor.trace_keys
    np.testing.assert_array_equal(back.labels_task, tensor.labels_task)


def test_select_raw_features():
    tensor = build_dataset([make_trace(30)])
    sub = tensor.select_raw_features([0, 35])
    assert sub.shape == (1, 100, 6)
    assert sub.feature_names[0] == "method.gesture:sum"
    assert sub.raw_schema.names == ["method.gesture", "up.z"]


# -- properties -----------------------------------------------------------------

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 400), st.integers(1, 4)), elements=finite), st.integers(1, 120))
def test_mass_conservation(x, l):
    acc = segment_accumulate(x, l)
    assert acc.shape == (l, x.shape[1])
    np.testing.assert_allclose(acc.sum(axis=0), x.sum(axis=0), rtol=1e-9, atol=1e-9 * np.abs(x).sum())


@given(
    hnp.arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 5), st.integers(1, 3)), elements=finite),
    hnp.arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 5), st.integers(1, 3)), elements=finite),
)
def test_normalized_range_with_unseen_data(train, test):
    if train.shape[-1] != test.shape[-1]:
        test = np.resize(test, test.shape[:-1] + train.shape[-1:])
    out = MinMaxNormalizer.fit(train).apply(test)
    assert np.all((out >= 0.0) & (out <= 1.0))


@given(st.integers(1, 300), st.integers(1, 50), st.integers(0, 2**32 - 1))
def test_order_free_within_segment(T, l, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(T, 3))
    b = segment_bounds(T, l)
    y = x.copy()
    for k in range(l):
        seg = slice(b[k], b[k + 1])
        y[seg] = y[seg][rng.permutation(b[k + 1] - b[k])]
    for stat in ("accumulate", "mean", "std"):
        np.testing.assert_allclose(segment_stats(x, l, (stat,)), segment_stats(y, l, (stat,)), rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("T", [1, 2, 99, 100, 101, 12345, 100_000])
def test_shape_contract(T):
    x = np.random.default_rng(T).normal(size=(T, 36))
    assert transform_trace(x).shape == (100, 108)
