"""k-nearest-neighbor classification under dynamic time warping."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numba
import numpy as np

from provts.errors import DimensionMismatch, EmptyTrainingSet, InvalidConfig, ShapeMismatch
from provts.parallel import pmap

VARIANTS = ("dependent", "independent")


@dataclass(frozen=True)
class KnnConfig:
    k: int = 30
    band: int | None = None
    variant: str = "dependent"  # or "independent": summed per-channel DTW

    kind = "knn"

    def __post_init__(self):
        if self.k < 1:
            raise InvalidConfig("k must be >= 1")
        if self.band is not None and self.band < 0:
            raise InvalidConfig("band must be >= 0")
        if self.variant not in VARIANTS:
            raise InvalidConfig(f"unknown DTW variant {self.variant!r}; choose from {VARIANTS}")

    def to_dict(self) -> dict:
        return {"k": self.k, "band": self.band, "variant": self.variant}

    def build(self, seed: int = 0, jobs: int | None = None) -> KnnClassifier:
        return KnnClassifier(self, jobs=jobs)


@numba.njit(cache=True, nogil=True)
def _dtw(a, b, band, cutoff):
    la, lb, d = a.shape[0], b.shape[0], a.shape[1]
    inf = np.inf
    prev = np.full(lb + 1, inf)
    cur = np.full(lb + 1, inf)
    prev[0] = 0.0
    for i in range(1, la + 1):
        cur[:] = inf
        if band < 0:
            jlo, jhi = 1, lb
        else:
            jlo, jhi = max(1, i - band), min(lb, i + band)
        rowmin = inf
        for j in range(jlo, jhi + 1):
            s = 0.0
            for c in range(d):
                diff = a[i - 1, c] - b[j - 1, c]
                s += diff * diff
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = np.sqrt(s) + best
            if cur[j] < rowmin:
                rowmin = cur[j]
        if rowmin > cutoff:
            return inf
        prev, cur = cur, prev
    return prev[lb]


@numba.njit(cache=True, nogil=True)
def _dtw_independent(a, b, band, cutoff):
    total = 0.0
    for c in range(a.shape[1]):
        total += _dtw(a[:, c : c + 1], b[:, c : c + 1], band, cutoff - total)
        if total > cutoff:
            return np.inf
    return total


def _distance(a, b, band, cutoff, independent):
    return _dtw_independent(a, b, band, cutoff) if independent else _dtw(a, b, band, cutoff)


def dtw_distance(a, b, band: int | None = None, cutoff: float = np.inf, variant: str = "dependent") -> float:
    """Multivariate DTW with Euclidean frame cost.

    "dependent" warps all channels together; "independent" sums one
    univariate DTW per channel.  Steps (i-1, j), (i, j-1), (i-1, j-1);
    ``band`` is a Sakoe-Chiba half-width (None = unconstrained).  If every
    cell of some row exceeds ``cutoff`` the computation is abandoned and
    ``inf`` returned.
    """
    if variant not in VARIANTS:
        raise InvalidConfig(f"unknown DTW variant {variant!r}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise DimensionMismatch("sequences must have at least one frame")
    return float(_distance(np.ascontiguousarray(a), np.ascontiguousarray(b), -1 if band is None else int(band),
                           float(cutoff), variant == "independent"))


def _neighbors(train: np.ndarray, labels: np.ndarray, query: np.ndarray, k: int, band: int, independent: bool = False):
    """k smallest (distance, label) pairs, found with early abandoning."""
    heap: list[tuple[float, int]] = []  # max-heap via negation
    for i in range(train.shape[0]):
        cutoff = -heap[0][0] if len(heap) == k else np.inf
        dist = _distance(query, train[i], band, cutoff, independent)
        if dist == np.inf:
            continue
        item = (-dist, -int(labels[i]))
        if len(heap) < k:
            heapq.heappush(heap, item)
        elif item > heap[0]:
            # (dist, label) lexicographically smaller than the current worst
            heapq.heapreplace(heap, item)
    return sorted((-d, -lab) for d, lab in heap)


def vote(neighbors: list[tuple[float, int]]) -> tuple[int, dict[int, int]]:
    """Majority vote; ties go to the smaller summed distance, then smaller code."""
    votes: dict[int, int] = {}
    sums: dict[int, float] = {}
    for dist, lab in neighbors:
        votes[lab] = votes.get(lab, 0) + 1
        sums[lab] = sums.get(lab, 0.0) + dist
    winner = min(votes, key=lambda c: (-votes[c], sums[c], c))
    return winner, dict(sorted(votes.items()))


def knn_predict(train_data, train_labels, query, config: KnnConfig = KnnConfig()) -> tuple[int, dict[int, int]]:
    """Classify one (l, d) query; returns (label, vote histogram)."""
    train = np.ascontiguousarray(train_data, dtype=np.float64)
    labels = np.asarray(train_labels, dtype=np.int64)
    if train.shape[0] == 0:
        raise EmptyTrainingSet("no training samples")
    if train.shape[0] < config.k:
        raise EmptyTrainingSet(f"need at least k={config.k} training samples, got {train.shape[0]}")
    q = np.ascontiguousarray(query, dtype=np.float64)
    if q.shape[-1] != train.shape[-1]:
        raise DimensionMismatch(f"query width {q.shape[-1]} != train width {train.shape[-1]}")
    band = -1 if config.band is None else config.band
    return vote(_neighbors(train, labels, q, config.k, band, config.variant == "independent"))


class KnnClassifier:
    """Lazy DTW-kNN: fitting just stores the training tensor."""

    def __init__(self, config: KnnConfig = KnnConfig(), jobs: int | None = None):
        self.config = config
        self.jobs = jobs
        self.train_data: np.ndarray | None = None
        self.train_labels: np.ndarray | None = None
        self.classes_: np.ndarray | None = None

    def fit(self, data, labels) -> KnnClassifier:
        data = np.ascontiguousarray(data, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if data.shape[0] == 0:
            raise EmptyTrainingSet("no training samples")
        if data.shape[0] < self.config.k:
            raise EmptyTrainingSet(f"need at least k={self.config.k} training samples, got {data.shape[0]}")
        self.train_data, self.train_labels = data, labels
        self.classes_ = np.unique(labels)
        return self

    def _histograms(self, data) -> list[tuple[int, dict[int, int]]]:
        if self.train_data is None:
            raise EmptyTrainingSet("classifier is not fitted")
        data = np.ascontiguousarray(data, dtype=np.float64)
        if data.ndim != 3 or data.shape[1:] != self.train_data.shape[1:]:
            raise ShapeMismatch(f"expected (n, {self.train_data.shape[1]}, {self.train_data.shape[2]}), got {data.shape}")
        band = -1 if self.config.band is None else self.config.band
        k, indep = self.config.k, self.config.variant == "independent"
        return pmap(
            lambda q: vote(_neighbors(self.train_data, self.train_labels, q, k, band, indep)),
            list(data),
            jobs=self.jobs,
        )

    def predict(self, data) -> np.ndarray:
        return np.array([lab for lab, _ in self._histograms(data)], dtype=np.int64)

    def predict_scores(self, data) -> np.ndarray:
        """Vote fractions per class (columns follow ``classes_``)."""
        hists = self._histograms(data)
        out = np.zeros((len(hists), self.classes_.size))
        pos = {c: i for i, c in enumerate(self.classes_)}
        for r, (_, votes) in enumerate(hists):
            for c, v in votes.items():
                out[r, pos[c]] = v / self.config.k
        return out

    def predict_with_confidence(self, data) -> tuple[np.ndarray, np.ndarray]:
        hists = self._histograms(data)
        labels = np.array([lab for lab, _ in hists], dtype=np.int64)
        conf = np.array([votes[lab] / self.config.k for lab, votes in hists])
        return labels, conf
