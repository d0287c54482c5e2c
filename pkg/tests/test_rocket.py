from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import ridge_oracle, rocket_kernel_naive
from provts.errors import DegenerateLabels, InvalidConfig, ShapeMismatch, SingularSystem
from provts.rocket import (
    KernelSet,
    RocketClassifier,
    RocketConfig,
    apply_kernels,
    fit_ridge,
    margin_confidence,
    permuted_features,
    ppv_max,
    sample_kernels,
    solve_ridge,
)
from provts.transform import MinMaxNormalizer


def test_kernel_sampling_is_deterministic():
    cfg = RocketConfig(n_kernels=300)
    a = sample_kernels(cfg, 100, 12, seed=1)
    b = sample_kernels(cfg, 100, 12, seed=1)
    assert a.to_bytes() == b.to_bytes()
    assert a.to_bytes() != sample_kernels(cfg, 100, 12, seed=2).to_bytes()


def test_kernel_length_histogram():
    ks = sample_kernels(RocketConfig(), 100, 108, seed=0)
    counts = [int(np.sum(ks.lengths == L)) for L in (7, 9, 11)]
    assert sum(counts) == 5000
    assert all(1500 <= c <= 1833 for c in counts), counts


def test_kernel_weights_centred_and_well_formed():
    ks = sample_kernels(RocketConfig(n_kernels=2000), 100, 36, seed=3)
    for i in range(len(ks)):
        k = ks.kernel(i)
        assert np.all(np.abs(k["weights"].mean(axis=1)) < 1e-9)
        assert -1.0 <= k["bias"] <= 1.0
        assert 1 <= len(k["channels"]) <= 36 and len(set(k["channels"])) == len(k["channels"])
        span = (k["length"] - 1) * k["dilation"]
        assert 100 + 2 * k["padding"] - span >= 1
        assert k["padding"] in (0, span // 2)


def test_kernel_bytes_roundtrip():
    ks = sample_kernels(RocketConfig(n_kernels=50), 40, 5, seed=4)
    back = KernelSet.from_bytes(ks.to_bytes())
    assert back.to_bytes() == ks.to_bytes()
    x = np.random.default_rng(0).normal(size=(3, 40, 5))
    np.testing.assert_array_equal(apply_kernels(x, ks), apply_kernels(x, back))


def test_ppv_max_examples():
    assert ppv_max([-1.0, 0.5, 2.0, -0.3]) == (0.5, 2.0)
    ks = sample_kernels(RocketConfig(n_kernels=200), 30, 3, seed=5)
    feats = apply_kernels(np.zeros((1, 30, 3)), ks)[0]
    ppv, mx = feats[0::2], feats[1::2]
    np.testing.assert_allclose(mx, ks.biases, atol=1e-12)
    np.testing.assert_array_equal(ppv, (ks.biases > 0).astype(float))


def _random_case(seed):
    rng = np.random.default_rng(seed)
    l, d = int(rng.integers(2, 40)), int(rng.integers(1, 6))
    ks = sample_kernels(RocketConfig(n_kernels=int(rng.integers(1, 25))), l, d, seed)
    return ks, rng.normal(size=(int(rng.integers(1, 4)), l, d))


@given(st.integers(0, 2**32 - 1))
def test_application_matches_naive_oracle(seed):
    ks, x = _random_case(seed)
    feats = apply_kernels(x, ks)
    assert np.all((feats[:, 0::2] >= 0) & (feats[:, 0::2] <= 1))
    assert np.all(np.isfinite(feats))
    for s in range(x.shape[0]):
        for i in range(len(ks)):
            k = ks.kernel(i)
            ppv, mx = rocket_kernel_naive(x[s], k["weights"], k["channels"], k["bias"], k["dilation"], k["padding"])
            assert abs(feats[s, 2 * i] - ppv) <= 1e-6 or _near_zero_output(x[s], k)
            assert feats[s, 2 * i + 1] == pytest.approx(mx, abs=1e-6)


def _near_zero_output(x, k):
    # PPV counts outputs > 0; a summation-order difference may flip an output within 1e-9 of zero
    L, dil, pad = k["length"], k["dilation"], k["padding"]
    for start in range(-pad, x.shape[0] + pad - (L - 1) * dil):
        s = k["bias"]
        for ci, ch in enumerate(k["channels"]):
            for j in range(L):
                t = start + j * dil
                if 0 <= t < x.shape[0]:
                    s += k["weights"][ci, j] * x[t, ch]
        if abs(s) < 1e-9:
            return True
    return False


@given(st.integers(0, 2**32 - 1))
def test_permuted_features_match_recomputed_transform(seed):
    ks, x = _random_case(seed)
    rng = np.random.default_rng(seed + 1)
    n = x.shape[0]
    channels = sorted(rng.choice(x.shape[2], int(rng.integers(1, x.shape[2] + 1)), replace=False).tolist())
    perms = [rng.permutation(n) for _ in range(3)]
    for perm, feats in zip(perms, permuted_features(x, ks, channels, perms)):
        moved = x.copy()
        moved[:, :, channels] = x[perm][:, :, channels]
        np.testing.assert_allclose(feats, apply_kernels(moved, ks), atol=1e-9)


def test_shape_check():
    ks = sample_kernels(RocketConfig(n_kernels=5), 20, 3, seed=0)
    with pytest.raises(ShapeMismatch):
        apply_kernels(np.zeros((1, 20, 4)), ks)


def test_config_validation():
    for kw in (dict(n_kernels=0), dict(lengths=()), dict(lengths=(1,)), dict(alphas=(0.0,)), dict(cv_folds=1)):
        with pytest.raises(InvalidConfig):
            RocketConfig(**kw)


# -- ridge ---------------------------------------------------------------------


def test_ridge_matches_gaussian_elimination_10x5():
    rng = np.random.default_rng(7)
    Z, y = rng.normal(size=(10, 5)), rng.normal(size=10)
    np.testing.assert_allclose(solve_ridge(Z, y, 0.3), ridge_oracle(Z, y, 0.3), atol=1e-8, rtol=0)


@given(st.integers(1, 30), st.integers(1, 30), st.integers(1, 4), st.sampled_from([1e-3, 1e-1, 1.0, 10.0, 1e3]),
       st.integers(0, 2**32 - 1))
def test_ridge_primal_and_dual_residual(n, p, k, alpha, seed):
    rng = np.random.default_rng(seed)
    Z, Y = rng.normal(size=(n, p)), rng.normal(size=(n, k))
    B = solve_ridge(Z, Y, alpha)
    res = (Z.T @ Z + alpha * np.eye(p)) @ B - Z.T @ Y
    assert np.abs(res).max() < 1e-6
    np.testing.assert_allclose(B, ridge_oracle(Z, Y, alpha), atol=1e-8, rtol=1e-8)


def test_ridge_rejects_nonpositive_alpha():
    with pytest.raises(SingularSystem):
        solve_ridge(np.eye(3), np.ones(3), 0.0)


def test_separable_blobs():
    rng = np.random.default_rng(8)
    F = np.vstack([rng.normal(-3, 1, (20, 2)), rng.normal(3, 1, (20, 2))])
    y = np.repeat([4, 9], 20)
    model = fit_ridge(F, y, alpha=1e-3)
    assert np.mean(model.predict(F) == y) == 1.0


def test_coefficients_shrink_with_alpha():
    rng = np.random.default_rng(9)
    F = rng.normal(size=(40, 8))
    y = (F[:, 0] + 0.5 * rng.normal(size=40) > 0).astype(int)
    norms = [np.linalg.norm(fit_ridge(F, y, alpha=a).coef) for a in 10.0 ** np.arange(-3, 4)]
    assert all(a > b for a, b in zip(norms, norms[1:]))


def test_alpha_selected_by_internal_cv():
    rng = np.random.default_rng(10)
    F = rng.normal(size=(30, 50))
    y = np.repeat([0, 1, 2], 10)
    F[:, 0] += y
    model = fit_ridge(F, y, RocketConfig())
    assert model.alpha in RocketConfig().alphas
    assert set(model.cv_scores) == set(RocketConfig().alphas)
    assert model.cv_scores[model.alpha] == max(model.cv_scores.values())
    tiny = fit_ridge(F[:4], np.array([0, 0, 1, 2]))
    assert tiny.alpha == 1.0 and tiny.cv_scores == {}


def test_ridge_label_checks():
    with pytest.raises(DegenerateLabels):
        fit_ridge(np.zeros((5, 2)), np.zeros(5, dtype=int))


def test_margin_confidence():
    s = np.array([[2.0, 1.0, -1.0], [0.5, 0.5, 0.0], [-1.0, 3.0, -1.0]])
    c = margin_confidence(s)
    np.testing.assert_allclose(c, np.tanh([2.0, 0.0, 8.0]))
    assert np.all((c >= 0) & (c <= 1))


# -- classifier --------------------------------------------------------------


@pytest.fixture(scope="module")
def trained(spaces3):
    x = MinMaxNormalizer.fit(spaces3.data).apply(spaces3.data)
    y = spaces3.labels("space")
    return RocketClassifier(RocketConfig(), seed=3).fit(x, y), x, y


@pytest.mark.slow
def test_training_set_accuracy(trained):
    model, x, y = trained
    assert np.mean(model.predict(x) == y) >= 0.95


@pytest.mark.slow
def test_single_sample_and_repeatability(trained):
    model, x, _ = trained
    one = model.predict(x[:1])
    assert one.shape == (1,)
    np.testing.assert_array_equal(model.predict(x[:7]), model.predict(x[:7]))
    labels, conf = model.predict_with_confidence(x[:5])
    assert np.all((conf >= 0) & (conf <= 1))


def test_end_to_end_seed_determinism():
    rng = np.random.default_rng(11)
    x = rng.random((30, 20, 4))
    y = np.repeat([0, 1, 2], 10)
    cfg = RocketConfig(n_kernels=100)
    a = RocketClassifier(cfg, seed=5, jobs=1).fit(x, y)
    b = RocketClassifier(cfg, seed=5, jobs=3).fit(x, y)
    np.testing.assert_array_equal(a.predict_scores(x), b.predict_scores(x))
    assert a.ridge.alpha == b.ridge.alpha
