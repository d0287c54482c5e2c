"""Shallow 1D CNN with hand-written forward and backward passes.

Layout: input (batch, time, channels) -> [valid conv -> ReLU] x conv_layers
-> global average pooling over time -> affine -> softmax.  Trained with
Adam on mean softmax cross-entropy.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from provts.errors import DegenerateLabels, InputTooShort, InvalidConfig, ShapeMismatch


@dataclass(frozen=True)
class CnnConfig:
    conv_layers: int = 2
    filters: int = 10
    filter_length: int = 10
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    kind = "cnn"

    def __post_init__(self):
        if self.conv_layers < 1 or self.filters < 1 or self.filter_length < 1:
            raise InvalidConfig("conv_layers, filters and filter_length must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfig("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    def build(self, seed: int = 0, jobs: int | None = None) -> CnnClassifier:
        return CnnClassifier(self, seed=seed)


def _windows(x: np.ndarray, length: int) -> np.ndarray:
    """(B, l, c) -> (B, l', length * c) patches, tap-major then channel."""
    if x.shape[1] < length:
        raise InputTooShort(f"sequence length {x.shape[1]} < filter length {length}")
    w = sliding_window_view(x, length, axis=1)  # (B, l', c, length)
    B, lo, c, _ = w.shape
    return np.ascontiguousarray(w.transpose(0, 1, 3, 2)).reshape(B, lo, length * c)


def conv1d_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid, stride-1 cross-correlation.

    ``out[t, f] = bias[f] + sum_{tau, c} x[t + tau, c] * kernels[f, tau, c]``.
    Accepts (l, c_in) or batched (B, l, c_in) input.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    F, L, c_in = kernels.shape
    if x.shape[2] != c_in:
        raise ShapeMismatch(f"input has {x.shape[2]} channels, kernels expect {c_in}")
    cols = _windows(x, L)
    out = cols @ kernels.reshape(F, L * c_in).T + bias
    return out[0] if single else out


def _conv_backward(cols, x_shape, kernels, dout, need_dx=True):
    F, L, c_in = kernels.shape
    B, lo, _ = dout.shape
    dW = (cols.reshape(B * lo, L * c_in).T @ dout.reshape(B * lo, F)).T.reshape(F, L, c_in)
    db = dout.sum(axis=(0, 1))
    if not need_dx:
        return None, dW, db
    dcols = (dout.reshape(B * lo, F) @ kernels.reshape(F, L * c_in)).reshape(B, lo, L, c_in)
    dx = np.zeros(x_shape)
    for s in range(L):
        dx[:, s : s + lo, :] += dcols[:, :, s, :]
    return dx, dW, db


def param_names(n_conv: int) -> list[str]:
    names = []
    for i in range(n_conv):
        names += [f"conv{i + 1}.weight", f"conv{i + 1}.bias"]
    return names + ["fc.weight", "fc.bias"]


def init_params(config: CnnConfig, in_channels: int, n_classes: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Xavier-uniform weights, zero biases."""
    p: dict[str, np.ndarray] = {}
    c = in_channels
    L, F = config.filter_length, config.filters
    for i in range(config.conv_layers):
        limit = np.sqrt(6.0 / (L * c + L * F))
        p[f"conv{i + 1}.weight"] = rng.uniform(-limit, limit, (F, L, c))
        p[f"conv{i + 1}.bias"] = np.zeros(F)
        c = F
    limit = np.sqrt(6.0 / (F + n_classes))
    p["fc.weight"] = rng.uniform(-limit, limit, (F, n_classes))
    p["fc.bias"] = np.zeros(n_classes)
    return p


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: dict[str, np.ndarray], x: np.ndarray, n_conv: int):
    """Return (probabilities, cache for backward)."""
    caches = []
    h = x
    for i in range(n_conv):
        W, b = params[f"conv{i + 1}.weight"], params[f"conv{i + 1}.bias"]
        cols = _windows(h, W.shape[1])
        z = cols @ W.reshape(W.shape[0], -1).T + b
        caches.append((cols, h.shape, z))
        h = np.maximum(z, 0.0)
    g = h.mean(axis=1)
    logits = g @ params["fc.weight"] + params["fc.bias"]
    return softmax(logits), (caches, h, g)


def loss_and_grads(params: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray, n_conv: int, reduce: str = "mean"):
    """Softmax cross-entropy over a batch and its parameter gradients.

    ``y`` holds class indices.  ``reduce="sum"`` returns the summed loss
    and summed gradients.
    """
    B = x.shape[0]
    probs, (caches, h, g) = forward(params, x, n_conv)
    scale = 1.0 / B if reduce == "mean" else 1.0
    loss = -np.log(np.clip(probs[np.arange(B), y], 1e-300, None)).sum() * scale
    dlogits = probs.copy()
    dlogits[np.arange(B), y] -= 1.0
    dlogits *= scale
    grads = {"fc.weight": g.T @ dlogits, "fc.bias": dlogits.sum(axis=0)}
    dg = dlogits @ params["fc.weight"].T
    dh = np.repeat(dg[:, None, :], h.shape[1], axis=1) / h.shape[1]
    for i in reversed(range(n_conv)):
        cols, in_shape, z = caches[i]
        dz = dh * (z > 0)
        W = params[f"conv{i + 1}.weight"]
        dh, dW, db = _conv_backward(cols, in_shape, W, dz, need_dx=i > 0)
        grads[f"conv{i + 1}.weight"] = dW
        grads[f"conv{i + 1}.bias"] = db
    return loss, grads


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k in params:
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * grads[k]
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * grads[k] ** 2
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class CnnClassifier:
    def __init__(self, config: CnnConfig = CnnConfig(), seed: int = 0):
        self.config = config
        self.seed = seed
        self.params: dict[str, np.ndarray] | None = None
        self.classes_: np.ndarray | None = None
        self.loss_history: list[float] = []

    def fit(self, data, labels) -> CnnClassifier:
        cfg = self.config
        x = np.asarray(data, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        classes, y = np.unique(labels, return_inverse=True)
        if classes.size < 2:
            raise DegenerateLabels("training labels contain a single class")
        n = x.shape[0]
        if n < cfg.batch_size:
            raise InvalidConfig(f"need at least batch_size={cfg.batch_size} samples, got {n}")
        min_len = cfg.conv_layers * (cfg.filter_length - 1) + 1
        if x.shape[1] < min_len:
            raise InputTooShort(f"sequence length {x.shape[1]} < {min_len} required by the conv stack")
        rng = np.random.default_rng(self.seed)
        params = init_params(cfg, x.shape[2], classes.size, rng)
        opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
        self.loss_history = []
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                loss, grads = loss_and_grads(params, x[idx], y[idx], cfg.conv_layers)
                opt.step(params, grads)
                total += loss * idx.size
            self.loss_history.append(total / n)
        self.params, self.classes_ = params, classes
        return self

    def _check(self, data) -> np.ndarray:
        if self.params is None:
            raise ShapeMismatch("model is not trained")
        x = np.asarray(data, dtype=np.float64)
        c_in = self.params["conv1.weight"].shape[2]
        if x.ndim != 3 or x.shape[2] != c_in:
            raise ShapeMismatch(f"expected (n, l, {c_in}) input, got {x.shape}")
        return x

    def predict_proba(self, data) -> np.ndarray:
        x = self._check(data)
        if x.shape[0] == 0:
            return np.zeros((0, self.classes_.size))
        probs, _ = forward(self.params, x, self.config.conv_layers)
        return probs

    predict_scores = predict_proba

    def predict(self, data) -> np.ndarray:
        return self.classes_[np.argmax(self.predict_proba(data), axis=1)]

    def predict_with_confidence(self, data) -> tuple[np.ndarray, np.ndarray]:
        p = self.predict_proba(data)
        return self.classes_[np.argmax(p, axis=1)], p.max(axis=1)


def train_cnn(data, labels, config: CnnConfig = CnnConfig(), seed: int = 0) -> CnnClassifier:
    return CnnClassifier(config, seed).fit(data, labels)


def cnn_predict(model: CnnClassifier, data) -> tuple[np.ndarray, np.ndarray]:
    """Return (labels, class probabilities)."""
    p = model.predict_proba(data)
    return model.classes_[np.argmax(p, axis=1)], p
