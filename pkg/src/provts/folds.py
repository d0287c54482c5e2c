"""Seeded stratified k-fold splitting."""

from __future__ import annotations

import numpy as np

from provts.errors import ClassTooSmall


def stratified_folds(labels, k: int, seed: int) -> list[np.ndarray]:
    """Assign samples to ``k`` folds class by class.

    Each class is shuffled and dealt round-robin, continuing the deal
    position across classes, so every fold holds within one sample of its
    share of every class and fold sizes differ by at most one per class.

    Returns the test-index array of each fold (sorted).
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be >= 2")
    classes, counts = np.unique(labels, return_counts=True)
    small = classes[counts < k]
    if small.size:
        raise ClassTooSmall(f"classes {small.tolist()} have fewer than k={k} samples")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) % (1 << 64), 4271]))
    assign = np.empty(labels.size, dtype=np.int64)
    pos = 0
    for c in classes:
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(members.size)]
        assign[members] = (pos + np.arange(members.size)) % k
        pos = (pos + members.size) % k
    return [np.flatnonzero(assign == f) for f in range(k)]


def train_test_pairs(labels, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    folds = stratified_folds(labels, k, seed)
    n = np.asarray(labels).size
    out = []
    for test in folds:
        mask = np.ones(n, dtype=bool)
        mask[test] = False
        out.append((np.flatnonzero(mask), test))
    return out
