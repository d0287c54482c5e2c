from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import dtw_exhaustive
from provts.errors import DimensionMismatch, EmptyTrainingSet, InvalidConfig, ShapeMismatch
from provts.knn import KnnClassifier, KnnConfig, dtw_distance, knn_predict, vote


def test_identity_is_zero():
    a = np.random.default_rng(0).normal(size=(9, 3))
    assert dtw_distance(a, a) == 0.0


def test_small_example():
    assert dtw_distance([0.0, 1.0, 2.0], [0.0, 2.0]) == pytest.approx(1.0, abs=1e-12)
    assert dtw_exhaustive(np.array([0.0, 1.0, 2.0]), np.array([0.0, 2.0])) == pytest.approx(1.0)


def test_band_zero_is_diagonal():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(12, 4)), rng.normal(size=(12, 4))
    diag = np.linalg.norm(a - b, axis=1).sum()
    assert dtw_distance(a, b, band=0) == pytest.approx(diag, rel=1e-12)


def test_early_abandon_returns_inf_only_above_cutoff():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(10, 2)), rng.normal(size=(10, 2)) + 5
    d = dtw_distance(a, b)
    assert dtw_distance(a, b, cutoff=d + 1e-9) == pytest.approx(d)
    assert dtw_distance(a, b, cutoff=d / 4) == np.inf


def test_dimension_checks():
    with pytest.raises(DimensionMismatch):
        dtw_distance(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(DimensionMismatch):
        dtw_distance(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(InvalidConfig):
        KnnConfig(k=0)


# a coarse grid makes repeated and shared frames likely and keeps
# squared differences clear of underflow
vals = st.integers(-40, 40).map(lambda v: v / 4)
seqs = st.integers(1, 6).flatmap(
    lambda d: st.tuples(
        st.lists(st.lists(vals, min_size=d, max_size=d), min_size=1, max_size=7),
        st.lists(st.lists(vals, min_size=d, max_size=d), min_size=1, max_size=7),
    )
)


@given(seqs)
def test_matches_exhaustive_oracle(pair):
    a, b = (np.array(s) for s in pair)
    assert dtw_distance(a, b) == pytest.approx(dtw_exhaustive(a, b), rel=1e-9, abs=1e-9)


def _collapse(x):
    keep = np.r_[True, np.any(x[1:] != x[:-1], axis=1)]
    return x[keep]


@given(seqs)
def test_independent_variant_sums_channels(pair):
    a, b = (np.array(s) for s in pair)
    expected = sum(dtw_exhaustive(a[:, c], b[:, c]) for c in range(a.shape[1]))
    assert dtw_distance(a, b, variant="independent") == pytest.approx(expected, rel=1e-9, abs=1e-9)
    if a.shape[1] == 1:
        assert dtw_distance(a, b, variant="independent") == dtw_distance(a, b)


def test_independent_classifier_and_bad_variant():
    rng = np.random.default_rng(6)
    train = rng.normal(size=(8, 6, 3))
    labels = np.repeat([1, 2], 4)
    clf = KnnClassifier(KnnConfig(k=1, variant="independent")).fit(train, labels)
    np.testing.assert_array_equal(clf.predict(train), labels)
    with pytest.raises(InvalidConfig):
        KnnConfig(variant="shape")
    with pytest.raises(InvalidConfig):
        dtw_distance(train[0], train[1], variant="shape")


@given(seqs)
def test_symmetry_and_identity(pair):
    a, b = (np.array(s) for s in pair)
    assert dtw_distance(a, b) == pytest.approx(dtw_distance(b, a), rel=1e-12, abs=1e-12)
    assert dtw_distance(a, a) == 0.0
    # zero distance exactly when the sequences agree up to repeated frames
    assert (dtw_distance(a, b) == 0.0) == np.array_equal(_collapse(a), _collapse(b))


@given(st.integers(2, 20), st.integers(0, 2**32 - 1))
def test_monotone_in_band(l, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(l, 2)), rng.normal(size=(l, 2))
    dists = [dtw_distance(a, b, band=w) for w in range(l)] + [dtw_distance(a, b)]
    assert all(x >= y - 1e-12 for x, y in zip(dists, dists[1:]))


def test_query_equal_to_training_sample():
    rng = np.random.default_rng(3)
    train = rng.normal(size=(6, 5, 2))
    labels = np.array([0, 1, 2, 10, 11, 12])
    for i in range(6):
        assert knn_predict(train, labels, train[i], KnnConfig(k=1))[0] == labels[i]


def test_majority_vote():
    assert vote([(0.1, 1), (0.2, 1), (0.3, 2)]) == (1, {1: 2, 2: 1})


def test_tie_break_on_summed_distance():
    # class 5: distances 0.4, 0.6 (sum 1.0); class 3: 0.3, 1.1 (sum 1.4)
    train = np.array([[[0.4]], [[0.6]], [[-0.3]], [[1.1]]])
    labels = np.array([5, 5, 3, 3])
    label, votes = knn_predict(train, labels, np.array([[0.0]]), KnnConfig(k=4))
    assert votes == {3: 2, 5: 2}
    assert label == 5
    assert vote([(0.5, 7), (0.5, 4)])[0] == 4  # full tie: smaller code


@given(st.integers(0, 2**32 - 1), st.integers(1, 7))
def test_invariant_to_training_order(seed, k):
    rng = np.random.default_rng(seed)
    train = rng.normal(size=(12, 4, 2))
    labels = rng.integers(0, 3, 12)
    query = rng.normal(size=(4, 2))
    perm = rng.permutation(12)
    cfg = KnnConfig(k=k)
    assert knn_predict(train, labels, query, cfg) == knn_predict(train[perm], labels[perm], query, cfg)


def test_classifier_scores_and_checks():
    rng = np.random.default_rng(4)
    train = rng.normal(size=(10, 6, 3))
    labels = np.repeat([0, 1], 5)
    clf = KnnClassifier(KnnConfig(k=3)).fit(train, labels)
    scores = clf.predict_scores(train[:4])
    np.testing.assert_allclose(scores.sum(axis=1), 1.0)
    labs, conf = clf.predict_with_confidence(train[:4])
    np.testing.assert_array_equal(labs, clf.predict(train[:4]))
    assert np.all((conf > 0) & (conf <= 1))
    with pytest.raises(ShapeMismatch):
        clf.predict(rng.normal(size=(1, 5, 3)))
    with pytest.raises(EmptyTrainingSet):
        KnnClassifier(KnnConfig(k=11)).fit(train, labels)


def test_parallel_matches_serial():
    rng = np.random.default_rng(5)
    train = rng.normal(size=(20, 8, 3))
    labels = rng.integers(0, 3, 20)
    q = rng.normal(size=(9, 8, 3))
    a = KnnClassifier(KnnConfig(k=5), jobs=1).fit(train, labels).predict_scores(q)
    b = KnnClassifier(KnnConfig(k=5), jobs=4).fit(train, labels).predict_scores(q)
    np.testing.assert_array_equal(a, b)
