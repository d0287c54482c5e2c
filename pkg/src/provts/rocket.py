"""Random convolutional kernel features with a one-vs-rest ridge classifier.

Kernels follow the usual recipe: length from {7, 9, 11}, normal weights
centred per channel, bias U(-1, 1), dilation ``floor(2**x)`` with
``x ~ U(0, log2((l - 1) / (length - 1)))``, and padding switched on with
probability 1/2.  Because inputs are multivariate, each kernel also reads
a random channel subset of size ``floor(2**u)``, ``u ~ U(0, log2 d)``.
Every kernel yields two features: the proportion of positive outputs
(PPV) and the maximum output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numba
import numpy as np
import scipy.linalg

from provts.errors import (
    DegenerateLabels,
    InvalidConfig,
    ShapeMismatch,
    SingularSystem,
)
from provts.folds import train_test_pairs
from provts.parallel import pmap

ALPHA_GRID = tuple(10.0**k for k in range(-3, 4))


@dataclass(frozen=True)
class RocketConfig:
    n_kernels: int = 5000
    lengths: tuple[int, ...] = (7, 9, 11)
    alphas: tuple[float, ...] = ALPHA_GRID
    cv_folds: int = 5

    kind = "rocket"

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(int(v) for v in self.lengths))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if self.n_kernels < 1:
            raise InvalidConfig("n_kernels must be >= 1")
        if not self.lengths or min(self.lengths) < 2:
            raise InvalidConfig("kernel lengths must be >= 2")
        if not self.alphas or min(self.alphas) <= 0:
            raise InvalidConfig("alphas must be positive")
        if self.cv_folds < 2:
            raise InvalidConfig("cv_folds must be >= 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lengths"] = list(self.lengths)
        d["alphas"] = list(self.alphas)
        return d

    def build(self, seed: int = 0, jobs: int | None = None) -> RocketClassifier:
        return RocketClassifier(self, seed=seed, jobs=jobs)


@dataclass(frozen=True)
class KernelSet:
    """Flat kernel table; kernel i owns weights[w_off[i]:w_off[i+1]]
    (row-major channels x length) and channels[c_off[i]:c_off[i+1]]."""

    lengths: np.ndarray
    dilations: np.ndarray
    paddings: np.ndarray
    biases: np.ndarray
    weights: np.ndarray
    channels: np.ndarray
    w_off: np.ndarray
    c_off: np.ndarray
    series_length: int
    n_channels: int

    def __len__(self) -> int:
        return int(self.lengths.size)

    def kernel(self, i: int) -> dict:
        nch = self.c_off[i + 1] - self.c_off[i]
        return {
            "length": int(self.lengths[i]),
            "dilation": int(self.dilations[i]),
            "padding": int(self.paddings[i]),
            "bias": float(self.biases[i]),
            "channels": self.channels[self.c_off[i] : self.c_off[i + 1]],
            "weights": self.weights[self.w_off[i] : self.w_off[i + 1]].reshape(nch, self.lengths[i]),
        }

    def to_bytes(self) -> bytes:
        parts = [
            np.array([len(self), self.series_length, self.n_channels], dtype="<i8"),
            self.lengths.astype("<i8"),
            self.dilations.astype("<i8"),
            self.paddings.astype("<i8"),
            self.biases.astype("<f8"),
            self.w_off.astype("<i8"),
            self.c_off.astype("<i8"),
            self.weights.astype("<f8"),
            self.channels.astype("<i8"),
        ]
        return b"".join(p.tobytes() for p in parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> KernelSet:
        head = np.frombuffer(blob, dtype="<i8", count=3)
        k, l, d = (int(v) for v in head)
        pos = 24

        def take(dtype, count):
            nonlocal pos
            arr = np.frombuffer(blob, dtype=dtype, count=count, offset=pos)
            pos += arr.nbytes
            return arr.astype(np.int64 if dtype == "<i8" else np.float64)

        lengths, dil, pad = take("<i8", k), take("<i8", k), take("<i8", k)
        biases = take("<f8", k)
        w_off, c_off = take("<i8", k + 1), take("<i8", k + 1)
        weights = take("<f8", int(w_off[-1]))
        channels = take("<i8", int(c_off[-1]))
        return cls(lengths, dil, pad, biases, weights, channels, w_off, c_off, l, d)


def sample_kernels(config: RocketConfig, series_length: int, n_channels: int, seed: int) -> KernelSet:
    """Draw ``config.n_kernels`` kernels for (series_length, n_channels) input."""
    if series_length < 1 or n_channels < 1:
        raise ShapeMismatch("series length and channel count must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) % (1 << 64), 7331]))
    K = config.n_kernels
    lengths = rng.choice(np.array(config.lengths), K)
    dil = np.empty(K, dtype=np.int64)
    pad = np.empty(K, dtype=np.int64)
    biases = np.empty(K)
    w_off = np.zeros(K + 1, dtype=np.int64)
    c_off = np.zeros(K + 1, dtype=np.int64)
    weights, channels = [], []
    log_d = np.log2(n_channels)
    for i in range(K):
        L = int(lengths[i])
        nch = int(min(n_channels, max(1, np.floor(2.0 ** rng.uniform(0, log_d)))))
        ch = np.sort(rng.choice(n_channels, nch, replace=False))
        w = rng.normal(0.0, 1.0, (nch, L))
        w -= w.mean(axis=1, keepdims=True)
        biases[i] = rng.uniform(-1.0, 1.0)
        span = (series_length - 1) / (L - 1)
        upper = np.log2(span) if span > 1 else 0.0
        dil[i] = int(np.floor(2.0 ** rng.uniform(0, upper)))
        padded = rng.integers(2) == 1
        p = ((L - 1) * dil[i]) // 2
        # a kernel longer than the series only fits with padding
        if series_length - (L - 1) * dil[i] < 1:
            padded = True
        pad[i] = p if padded else 0
        weights.append(w.ravel())
        channels.append(ch)
        w_off[i + 1] = w_off[i] + w.size
        c_off[i + 1] = c_off[i] + nch
    return KernelSet(
        lengths.astype(np.int64),
        dil,
        pad,
        biases,
        np.concatenate(weights),
        np.concatenate(channels).astype(np.int64),
        w_off,
        c_off,
        series_length,
        n_channels,
    )


@numba.njit(cache=True, nogil=True, fastmath=True)
def _apply_batch(xs, lengths, dil, pad, biases, weights, channels, w_off, c_off, k0, k1, out):
    # xs: (channels, time, samples) contiguous; samples innermost so the
    # multiply-add loop runs over contiguous memory
    l, n = xs.shape[1], xs.shape[2]
    buf = np.empty((l, n))
    for k in range(k0, k1):
        L, d, p = lengths[k], dil[k], pad[k]
        n_out = l + 2 * p - (L - 1) * d
        b = biases[k]
        for t in range(n_out):
            for s in range(n):
                buf[t, s] = b
        nch = c_off[k + 1] - c_off[k]
        for ci in range(nch):
            c = channels[c_off[k] + ci]
            for j in range(L):
                w = weights[w_off[k] + ci * L + j]
                shift = j * d - p
                t0 = max(0, -shift)
                t1 = min(n_out, l - shift)
                for t in range(t0, t1):
                    src = xs[c, t + shift]
                    dst = buf[t]
                    for s in range(n):
                        dst[s] += w * src[s]
        for s in range(n):
            pos = 0
            mx = -np.inf
            for t in range(n_out):
                v = buf[t, s]
                if v > 0:
                    pos += 1
                if v > mx:
                    mx = v
            out[s, 2 * k] = pos / n_out
            out[s, 2 * k + 1] = mx


def apply_kernels(data, kernels: KernelSet, jobs: int | None = None) -> np.ndarray:
    """Transform (n, l, d) data into (n, 2K) features [ppv_0, max_0, ppv_1, ...]."""
    x = np.asarray(data, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != kernels.n_channels or x.shape[1] != kernels.series_length:
        raise ShapeMismatch(
            f"kernels expect (n, {kernels.series_length}, {kernels.n_channels}) input, got {x.shape}"
        )
    n = x.shape[0]
    out = np.zeros((n, 2 * len(kernels)))
    if n == 0:
        return out
    xs = np.ascontiguousarray(x.transpose(2, 1, 0))
    ks = kernels
    K = len(ks)
    chunk = 250
    bounds = [(a, min(K, a + chunk)) for a in range(0, K, chunk)]

    def run(b):
        _apply_batch(xs, ks.lengths, ks.dilations, ks.paddings, ks.biases, ks.weights, ks.channels, ks.w_off, ks.c_off, b[0], b[1], out)

    pmap(run, bounds, jobs=jobs)
    return out


@numba.njit(cache=True, nogil=True)
def _split_outputs(xs, kidx, lengths, dil, pad, biases, weights, channels, w_off, c_off, moved, G, R):
    # convolution outputs of kernels kidx split by channel: G sums the
    # channels flagged in `moved`, R the rest plus the bias
    l, n = xs.shape[1], xs.shape[2]
    for a in range(kidx.size):
        k = kidx[a]
        L, d, p = lengths[k], dil[k], pad[k]
        n_out = l + 2 * p - (L - 1) * d
        for t in range(n_out):
            for s in range(n):
                G[a, t, s] = 0.0
                R[a, t, s] = biases[k]
        nch = c_off[k + 1] - c_off[k]
        for ci in range(nch):
            c = channels[c_off[k] + ci]
            for j in range(L):
                w = weights[w_off[k] + ci * L + j]
                shift = j * d - p
                t0 = max(0, -shift)
                t1 = min(n_out, l - shift)
                for t in range(t0, t1):
                    src = xs[c, t + shift]
                    if moved[c]:
                        for s in range(n):
                            G[a, t, s] += w * src[s]
                    else:
                        for s in range(n):
                            R[a, t, s] += w * src[s]


@numba.njit(cache=True, nogil=True)
def _permuted_ppv_max(G, R, n_outs, perm, out):
    for a in range(G.shape[0]):
        n_out = n_outs[a]
        for s in range(R.shape[2]):
            src = perm[s]
            pos = 0
            mx = -np.inf
            for t in range(n_out):
                v = R[a, t, s] + G[a, t, src]
                if v > 0:
                    pos += 1
                if v > mx:
                    mx = v
            out[s, 2 * a] = pos / n_out
            out[s, 2 * a + 1] = mx


def permuted_features(data, kernels: KernelSet, channels, perms, base: np.ndarray | None = None):
    """Kernel features after moving ``channels`` across samples by each permutation.

    Equivalent to ``apply_kernels(x_perm, kernels)`` where
    ``x_perm[:, :, channels] = x[perm][:, :, channels]``, but each kernel
    output is computed once and split into the part that reads the moved
    channels and the part that does not, so a permutation only needs a
    gather and a PPV/max pass over the kernels that touch the channels.
    Yields one (n, 2K) feature matrix per permutation.
    """
    x = np.asarray(data, dtype=np.float64)
    n, l, d = x.shape
    if base is None:
        base = apply_kernels(x, kernels)
    moved = np.zeros(d, dtype=np.bool_)
    moved[np.asarray(channels, dtype=np.int64)] = True
    ks = kernels
    touch = np.array(
        [moved[ks.channels[ks.c_off[k] : ks.c_off[k + 1]]].any() for k in range(len(ks))], dtype=bool
    )
    kidx = np.flatnonzero(touch).astype(np.int64)
    n_outs = l + 2 * ks.paddings[kidx] - (ks.lengths[kidx] - 1) * ks.dilations[kidx]
    xs = np.ascontiguousarray(x.transpose(2, 1, 0))
    G = np.empty((kidx.size, l, n))
    R = np.empty((kidx.size, l, n))
    _split_outputs(xs, kidx, ks.lengths, ks.dilations, ks.paddings, ks.biases, ks.weights, ks.channels, ks.w_off, ks.c_off, moved, G, R)
    cols = np.empty(2 * kidx.size, dtype=np.int64)
    cols[0::2], cols[1::2] = 2 * kidx, 2 * kidx + 1
    part = np.empty((n, 2 * kidx.size))
    for perm in perms:
        _permuted_ppv_max(G, R, n_outs, np.asarray(perm, dtype=np.int64), part)
        feats = base.copy()
        feats[:, cols] = part
        yield feats


def ppv_max(outputs) -> tuple[float, float]:
    """PPV and max of one convolution output sequence."""
    o = np.asarray(outputs, dtype=np.float64)
    return float(np.mean(o > 0)), float(o.max())


# -- ridge ----------------------------------------------------------------------


def solve_ridge(Z: np.ndarray, Y: np.ndarray, alpha: float) -> np.ndarray:
    """Solve ``(Z^T Z + alpha I) B = Z^T Y`` for B.

    Uses a Cholesky factorization of the p x p normal matrix when
    p <= n, otherwise of the n x n Gram matrix (``B = Z^T A`` with
    ``(Z Z^T + alpha I) A = Y``).  One step of iterative refinement follows.
    """
    if alpha <= 0:
        raise SingularSystem("alpha must be positive")
    Z = np.asarray(Z, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    squeeze = Y.ndim == 1
    if squeeze:
        Y = Y[:, None]
    n, p = Z.shape
    if p <= n:
        M = Z.T @ Z
        M[np.diag_indices(p)] += alpha
        rhs = Z.T @ Y
        fac = scipy.linalg.cho_factor(M)
        B = scipy.linalg.cho_solve(fac, rhs)
        B += scipy.linalg.cho_solve(fac, rhs - M @ B)
    else:
        K = Z @ Z.T
        K[np.diag_indices(n)] += alpha
        fac = scipy.linalg.cho_factor(K)
        A = scipy.linalg.cho_solve(fac, Y)
        A += scipy.linalg.cho_solve(fac, Y - K @ A)
        B = Z.T @ A
    return B[:, 0] if squeeze else B


def _standardize_fit(F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = F.mean(axis=0)
    std = F.std(axis=0)
    std[std == 0] = 1.0
    return mean, std


def _targets(y_idx: np.ndarray, n_classes: int) -> np.ndarray:
    Y = -np.ones((y_idx.size, n_classes))
    Y[np.arange(y_idx.size), y_idx] = 1.0
    return Y


@dataclass
class RidgeModel:
    classes: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    coef: np.ndarray  # (p, n_classes) in standardized space
    intercept: np.ndarray
    alpha: float
    cv_scores: dict[float, float] = field(default_factory=dict)

    def decision_function(self, F: np.ndarray) -> np.ndarray:
        Z = (np.asarray(F, dtype=np.float64) - self.mean) / self.scale
        return Z @ self.coef + self.intercept

    def predict(self, F: np.ndarray) -> np.ndarray:
        return self.classes[np.argmax(self.decision_function(F), axis=1)]


def _fit_fixed(F: np.ndarray, y_idx: np.ndarray, n_classes: int, alpha: float):
    mean, scale = _standardize_fit(F)
    Z = (F - mean) / scale
    Y = _targets(y_idx, n_classes)
    ybar = Y.mean(axis=0)
    # Z is centred, so Z^T Y == Z^T (Y - ybar); ybar is the intercept
    coef = solve_ridge(Z, Y, alpha)
    return mean, scale, coef, ybar


def _cv_alpha(F, y_idx, n_classes, alphas, folds, seed) -> tuple[float, dict[float, float]]:
    correct = {a: 0 for a in alphas}
    for train, test in train_test_pairs(y_idx, folds, seed):
        mean, scale = _standardize_fit(F[train])
        Z = (F[train] - mean) / scale
        Zt = (F[test] - mean) / scale
        Y = _targets(y_idx[train], n_classes)
        ybar = Y.mean(axis=0)
        n, p = Z.shape
        if p > n:
            K = Z @ Z.T
            Kt = Zt @ Z.T
            for a in alphas:
                Ka = K.copy()
                Ka[np.diag_indices(n)] += a
                A = scipy.linalg.cho_solve(scipy.linalg.cho_factor(Ka), Y)
                pred = np.argmax(Kt @ A + ybar, axis=1)
                correct[a] += int(np.sum(pred == y_idx[test]))
        else:
            for a in alphas:
                B = solve_ridge(Z, Y, a)
                pred = np.argmax(Zt @ B + ybar, axis=1)
                correct[a] += int(np.sum(pred == y_idx[test]))
    total = y_idx.size
    scores = {a: correct[a] / total for a in alphas}
    best = min(alphas, key=lambda a: (-scores[a], a))
    return best, scores


def fit_ridge(features, labels, config: RocketConfig = RocketConfig(), seed: int = 0, alpha: float | None = None) -> RidgeModel:
    """One-vs-rest ridge classifier on standardized features.

    The regularization strength is picked from ``config.alphas`` by
    stratified internal CV accuracy (ties to the smaller alpha) unless
    ``alpha`` is given.  With fewer than two samples in some class the
    internal CV is skipped and alpha = 1 is used.
    """
    F = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if F.shape[0] < 2:
        raise DegenerateLabels("ridge needs at least two samples")
    classes, y_idx = np.unique(labels, return_inverse=True)
    if classes.size < 2:
        raise DegenerateLabels("training labels contain a single class")
    cv_scores: dict[float, float] = {}
    if alpha is None:
        min_count = int(np.bincount(y_idx).min())
        folds = min(config.cv_folds, min_count)
        if folds >= 2:
            alpha, cv_scores = _cv_alpha(F, y_idx, classes.size, config.alphas, folds, seed)
        else:
            alpha = 1.0
    mean, scale, coef, intercept = _fit_fixed(F, y_idx, classes.size, alpha)
    return RidgeModel(classes, mean, scale, coef, intercept, float(alpha), cv_scores)


class RocketClassifier:
    def __init__(self, config: RocketConfig = RocketConfig(), seed: int = 0, jobs: int | None = None):
        self.config = config
        self.seed = seed
        self.jobs = jobs
        self.kernels: KernelSet | None = None
        self.ridge: RidgeModel | None = None

    @property
    def classes_(self) -> np.ndarray:
        return self.ridge.classes

    def fit(self, data, labels) -> RocketClassifier:
        x = np.asarray(data, dtype=np.float64)
        self.kernels = sample_kernels(self.config, x.shape[1], x.shape[2], self.seed)
        feats = apply_kernels(x, self.kernels, self.jobs)
        self.ridge = fit_ridge(feats, labels, self.config, self.seed)
        return self

    def transform(self, data) -> np.ndarray:
        if self.kernels is None:
            raise ShapeMismatch("model is not trained")
        return apply_kernels(data, self.kernels, self.jobs)

    def predict_scores(self, data) -> np.ndarray:
        return self.ridge.decision_function(self.transform(data))

    def permuted_scores(self, data, channels, perms, base: np.ndarray | None = None):
        """Scores under each block permutation of ``channels`` (see permuted_features).

        ``base`` may carry precomputed ``transform(data)`` features.
        """
        if base is None:
            base = self.transform(data)
        for feats in permuted_features(data, self.kernels, channels, perms, base):
            yield self.ridge.decision_function(feats)

    def predict(self, data) -> np.ndarray:
        return self.ridge.classes[np.argmax(self.predict_scores(data), axis=1)]

    def predict_with_confidence(self, data) -> tuple[np.ndarray, np.ndarray]:
        scores = self.predict_scores(data)
        return self.ridge.classes[np.argmax(scores, axis=1)], margin_confidence(scores)


def margin_confidence(scores: np.ndarray) -> np.ndarray:
    """Squash the top-1 minus top-2 score margin into [0, 1): tanh(2 * margin)."""
    s = np.sort(np.asarray(scores, dtype=np.float64), axis=1)
    if s.shape[1] < 2:
        return np.ones(s.shape[0])
    margin = s[:, -1] - s[:, -2]
    return np.tanh(2.0 * margin)


def rocket_predict(model: RocketClassifier, data) -> np.ndarray:
    return model.predict(data)
