"""Cross-validated evaluation, confusion matrices and feature importance.

Two importance procedures are provided:

* leave-group-out: drop every derived column of one feature group,
  re-run cross-validation and report the drop in accuracy and macro-F1;
* PermFIT: move one raw feature's derived columns across samples as a
  block (each sample keeps an intact temporal profile, just someone
  else's) and measure the mean squared change of the per-class score
  vectors.  By default the model is retrained under the same folds for
  every permutation; ``mode="inference"`` permutes the inputs of an
  already trained model instead.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from provts.errors import EmptyFeatureSet, InvalidConfig, ShapeMismatch, UnknownClass, UnknownFeature
from provts.folds import train_test_pairs
from provts.transform import MinMaxNormalizer
from provts.types import FeatureGroup, FeatureTensor

SCALES = ("space", "task")


def confusion_matrix(truth, predicted, classes) -> np.ndarray:
    """``cm[i, j]`` = number of samples with truth ``classes[i]`` predicted ``classes[j]``."""
    truth = np.asarray(truth, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    classes = np.asarray(classes, dtype=np.int64)
    if truth.shape != predicted.shape:
        raise ShapeMismatch(f"truth has {truth.size} labels, predictions {predicted.size}")
    pos = {int(c): i for i, c in enumerate(classes)}
    unknown = sorted({int(v) for v in np.concatenate([truth, predicted])} - set(pos))
    if unknown:
        raise UnknownClass(f"labels {unknown} are not in the class list")
    cm = np.zeros((classes.size, classes.size), dtype=np.int64)
    ti = np.array([pos[int(v)] for v in truth], dtype=np.int64)
    pi = np.array([pos[int(v)] for v in predicted], dtype=np.int64)
    np.add.at(cm, (ti, pi), 1)
    return cm


def accuracy_from_cm(cm: np.ndarray) -> float:
    total = cm.sum()
    return float(np.trace(cm) / total) if total else 0.0


def f1_per_class(cm: np.ndarray) -> np.ndarray:
    """Per-class F1; a class with no true or predicted samples scores 0."""
    tp = np.diag(cm).astype(np.float64)
    denom = cm.sum(axis=0) + cm.sum(axis=1)
    out = np.zeros(cm.shape[0])
    nz = denom > 0
    out[nz] = 2 * tp[nz] / denom[nz]
    return out


def macro_f1_from_cm(cm: np.ndarray) -> float:
    return float(f1_per_class(cm).mean()) if cm.size else 0.0


@dataclass
class EvalReport:
    scale: str
    model_id: str
    environment: str
    classes: np.ndarray
    confusion: np.ndarray  # pooled over folds
    fold_accuracy: list[float]
    fold_macro_f1: list[float]
    seed: int = 0
    k: int = 5
    assumptions: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.assumptions:
            self.assumptions = list(ASSUMPTIONS.get(self.model_id, ()))

    @property
    def accuracy(self) -> float:
        return accuracy_from_cm(self.confusion)

    @property
    def macro_f1(self) -> float:
        return macro_f1_from_cm(self.confusion)

    @property
    def mean_fold_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracy))

    @property
    def mean_fold_macro_f1(self) -> float:
        return float(np.mean(self.fold_macro_f1))

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "model_id": self.model_id,
            "environment": self.environment,
            "k": self.k,
            "seed": self.seed,
            "classes": [int(c) for c in self.classes],
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "mean_fold_accuracy": self.mean_fold_accuracy,
            "mean_fold_macro_f1": self.mean_fold_macro_f1,
            "fold_accuracy": list(self.fold_accuracy),
            "fold_macro_f1": list(self.fold_macro_f1),
            "per_class_f1": f1_per_class(self.confusion).tolist(),
            "confusion": self.confusion.tolist(),
            "assumptions": list(self.assumptions),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def confusion_csv(self) -> str:
        return confusion_to_csv(self.confusion, self.classes)

    def save(self, directory: str | Path, stem: str = "eval", png: bool = True) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = [d / f"{stem}.json", d / f"{stem}_confusion.csv"]
        paths[0].write_text(self.to_json())
        paths[1].write_text(self.confusion_csv())
        if png:
            paths.append(save_confusion_png(self.confusion, self.classes, d / f"{stem}_confusion.png", self.model_id))
        return paths


def confusion_to_csv(cm: np.ndarray, classes) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["truth\\pred"] + [str(int(c)) for c in classes])
    for c, row in zip(classes, cm):
        w.writerow([str(int(c))] + [str(int(v)) for v in row])
    return buf.getvalue()


def save_confusion_png(cm: np.ndarray, classes, path: str | Path, title: str = "") -> Path:
    """Row-normalized heatmap of a confusion matrix."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = cm.sum(axis=1, keepdims=True)
    norm = np.divide(cm, rows, out=np.zeros(cm.shape), where=rows > 0)
    size = max(3.0, 0.35 * len(classes) + 1.5)
    fig, ax = plt.subplots(figsize=(size, size))
    ax.imshow(norm, vmin=0, vmax=1, cmap="Blues")
    labels = [str(int(c)) for c in classes]
    ax.set_xticks(range(len(labels)), labels, rotation=90 if len(labels) > 10 else 0)
    ax.set_yticks(range(len(labels)), labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("truth")
    if len(labels) <= 12:
        for i in range(len(labels)):
            for j in range(len(labels)):
                ax.text(j, i, f"{norm[i, j]:.2f}", ha="center", va="center", fontsize=7,
                        color="white" if norm[i, j] > 0.5 else "black")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    # fixed metadata keeps the file byte-stable across runs
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return Path(path)


# implementation choices echoed in every report
ASSUMPTIONS = {
    "cnn": (
        "ReLU after each convolution",
        "global average pooling before the dense softmax layer",
        "valid (unpadded) stride-1 convolutions",
        "Adam optimizer, learning rate 1e-3, betas 0.9/0.999",
    ),
    "knn": ("dependent multivariate DTW unless variant=independent", "no warping band unless band is set"),
    "rocket": ("kernels applied to the transformed, min-max scaled tensor",),
}


def _model_id(config) -> str:
    return getattr(config, "kind", type(config).__name__)


def _fold_predictions(data, labels, config, pairs, seed, jobs, want_scores):
    """Fit one model per fold and return (out-of-fold predictions, scores or None).

    Scaling is refitted on each training fold.
    """
    classes = np.unique(labels)
    n = labels.size

    def run(f):
        train, test = pairs[f]
        norm = MinMaxNormalizer.fit(data[train])
        clf = config.build(seed=seed, jobs=jobs)
        clf.fit(norm.apply(data[train]), labels[train])
        xt = norm.apply(data[test])
        if want_scores:
            s = np.asarray(clf.predict_scores(xt), dtype=np.float64)
            aligned = np.zeros((test.size, classes.size))
            aligned[:, np.searchsorted(classes, clf.classes_)] = s
            return clf.predict(xt), aligned
        return clf.predict(xt), None

    # folds run one after another; each model already uses the worker pool
    results = [run(f) for f in range(len(pairs))]
    pred = np.empty(n, dtype=np.int64)
    scores = np.zeros((n, classes.size)) if want_scores else None
    for (train, test), (p, s) in zip(pairs, results):
        pred[test] = p
        if want_scores:
            scores[test] = s
    return pred, scores


def _check_labels(labels: np.ndarray) -> None:
    if np.any(labels < 0):
        raise InvalidConfig("dataset contains unlabeled samples")


def cross_validate(
    tensor: FeatureTensor,
    model_config,
    scale: str = "space",
    k: int = 5,
    seed: int = 0,
    jobs: int | None = None,
    data: np.ndarray | None = None,
) -> EvalReport:
    """Stratified k-fold evaluation of ``model_config`` on ``tensor``.

    ``model_config`` needs ``build(seed, jobs)`` returning an object with
    ``fit`` and ``predict``.  ``data`` overrides ``tensor.data`` (same
    labels), which the importance procedures use.
    """
    if scale not in SCALES:
        raise InvalidConfig(f"scale must be one of {SCALES}")
    labels = tensor.labels(scale)
    _check_labels(labels)
    x = tensor.data if data is None else data
    pairs = train_test_pairs(labels, k, seed)
    pred, _ = _fold_predictions(x, labels, model_config, pairs, seed, jobs, False)
    classes = np.unique(labels)
    fold_acc, fold_f1 = [], []
    for _, test in pairs:
        cm = confusion_matrix(labels[test], pred[test], classes)
        fold_acc.append(accuracy_from_cm(cm))
        fold_f1.append(macro_f1_from_cm(cm))
    return EvalReport(
        scale,
        _model_id(model_config),
        tensor.raw_schema.environment.value,
        classes,
        confusion_matrix(labels, pred, classes),
        fold_acc,
        fold_f1,
        seed,
        k,
    )


# -- importance -----------------------------------------------------------------


@dataclass
class GroupImportance:
    group: str
    delta_accuracy: float
    delta_macro_f1: float
    full: EvalReport
    reduced: EvalReport


@dataclass
class ImportanceReport:
    groups: list[GroupImportance] = field(default_factory=list)
    features: list[str] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    mode: str = "retrain"
    repeats: int = 100

    @property
    def ranking(self) -> list[tuple[int, str, float]]:
        """(rank, feature, score) sorted by decreasing score; ties by name."""
        order = sorted(range(len(self.features)), key=lambda i: (-self.scores[i], self.features[i]))
        return [(r + 1, self.features[i], self.scores[i]) for r, i in enumerate(order)]

    def rank_of(self, feature: str) -> int:
        for r, name, _ in self.ranking:
            if name == feature:
                return r
        raise UnknownFeature(feature)

    def to_dict(self) -> dict:
        return {
            "leave_group_out": [
                {
                    "group": g.group,
                    "delta_accuracy": g.delta_accuracy,
                    "delta_macro_f1": g.delta_macro_f1,
                    "full_accuracy": g.full.accuracy,
                    "reduced_accuracy": g.reduced.accuracy,
                    "full_macro_f1": g.full.macro_f1,
                    "reduced_macro_f1": g.reduced.macro_f1,
                }
                for g in self.groups
            ],
            "permfit": {
                "mode": self.mode,
                "repeats": self.repeats,
                "ranking": [{"rank": r, "feature": f, "score": s} for r, f, s in self.ranking],
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def groups_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group", "delta_accuracy", "delta_macro_f1"])
        for g in self.groups:
            w.writerow([g.group, repr(g.delta_accuracy), repr(g.delta_macro_f1)])
        return buf.getvalue()

    def ranking_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "feature", "score"])
        for r, f, s in self.ranking:
            w.writerow([r, f, repr(s)])
        return buf.getvalue()

    def table(self) -> str:
        """Plain-text ranked list."""
        width = max([len(f) for f in self.features] + [7])
        lines = [f"{'rank':>4}  {'feature':<{width}}  score"]
        lines += [f"{r:>4}  {f:<{width}}  {s:.6g}" for r, f, s in self.ranking]
        return "\n".join(lines)


def _raw_indices_for(tensor: FeatureTensor, features: Iterable[str]) -> list[int]:
    schema = tensor.raw_schema
    return [schema.index(f) for f in features]


def leave_group_out(
    tensor: FeatureTensor,
    model_config,
    group: FeatureGroup | str | Sequence[str],
    scale: str = "space",
    k: int = 5,
    seed: int = 0,
    jobs: int | None = None,
    baseline: EvalReport | None = None,
) -> GroupImportance:
    """Drop a feature group (or an explicit list of raw features) and re-evaluate.

    Deltas are full-score minus reduced-score.
    """
    schema = tensor.raw_schema
    if isinstance(group, (FeatureGroup, str)) and (isinstance(group, FeatureGroup) or group in {g.value for g in FeatureGroup}):
        g = FeatureGroup(group)
        drop = schema.indices(group=g)
        if not drop:
            raise UnknownFeature(f"group {g.value!r} has no features in this schema")
        name = g.value
    else:
        names = [group] if isinstance(group, str) else list(group)
        drop = _raw_indices_for(tensor, names)
        name = "+".join(names)
    keep = [i for i in range(schema.dim) if i not in set(drop)]
    if not keep:
        raise EmptyFeatureSet(f"removing {name!r} leaves no features")
    full = baseline or cross_validate(tensor, model_config, scale, k, seed, jobs)
    reduced = cross_validate(tensor.select_raw_features(keep), model_config, scale, k, seed, jobs)
    return GroupImportance(
        name,
        full.accuracy - reduced.accuracy,
        full.macro_f1 - reduced.macro_f1,
        full,
        reduced,
    )


def _permutations(n: int, repeats: int, seed: int, feature_index: int) -> list[np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) % (1 << 64), 9173, feature_index]))
    return [rng.permutation(n) for _ in range(repeats)]


def _block_permute(data: np.ndarray, cols: np.ndarray, perm: np.ndarray) -> np.ndarray:
    out = data.copy()
    out[:, :, cols] = data[perm][:, :, cols]
    return out


def _mean_sq(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.sum((a - b) ** 2, axis=1)))


def permfit(
    tensor: FeatureTensor,
    model,
    feature: str,
    repeats: int = 100,
    seed: int = 0,
    mode: str = "retrain",
    scale: str | None = None,
    k: int = 5,
    jobs: int | None = None,
    perms: Sequence[np.ndarray] | None = None,
    cache: dict | None = None,
) -> float:
    """PermFIT score of one raw feature.

    ``mode="retrain"``: ``model`` is a model config; out-of-fold scores are
    compared between the original data and each permuted copy, retraining
    under identical folds and seeds.  ``mode="inference"``: ``model`` is a
    trained model (see provts.models.TrainedModel) applied to permuted
    inputs.  kNN contributes vote fractions as its scores.

    Permutations are drawn from ``seed`` and the feature's schema index;
    pass ``perms`` to supply them explicitly.  ``cache`` (any dict) lets
    repeated calls on the same tensor and model share unpermuted work.
    """
    if mode not in ("retrain", "inference"):
        raise InvalidConfig("mode must be 'retrain' or 'inference'")
    raw = tensor.raw_schema.index(feature)
    cols = np.asarray(tensor.raw_feature_columns(feature), dtype=np.int64)
    n = tensor.shape[0]
    if perms is None:
        perms = _permutations(n, repeats, seed, raw)
    if not len(perms):
        raise InvalidConfig("repeats must be >= 1")
    data = tensor.data
    cache = {} if cache is None else cache
    # a permutation that leaves the feature block unchanged scores exactly 0
    block = data[:, :, cols]
    moved = [p for p in perms if not np.array_equal(block[p], block)]
    still = len(perms) - len(moved)
    if not moved:
        return 0.0
    if mode == "inference":
        if "scores" not in cache:
            cache["scores"] = model.predict_scores(tensor)
        base = cache["scores"]
        clf = model.classifier
        if hasattr(clf, "permuted_scores"):
            # exact fast path: scaling is per column, so permuting before or
            # after it is the same
            if "x" not in cache:
                cache["x"] = model.normalizer.apply(data)
                cache["features"] = clf.transform(cache["x"])
            diffs = [
                _mean_sq(base, s)
                for s in clf.permuted_scores(cache["x"], cols, moved, base=cache["features"])
            ]
        else:
            diffs = [_mean_sq(base, model.predict_scores(_block_permute(data, cols, p))) for p in moved]
        return float(np.sum(diffs) / (len(diffs) + still))
    scale = scale or "space"
    labels = tensor.labels(scale)
    _check_labels(labels)
    pairs = train_test_pairs(labels, k, seed)
    if "oof" not in cache:
        cache["oof"] = _fold_predictions(data, labels, model, pairs, seed, jobs, True)[1]
    base = cache["oof"]
    diffs = []
    for p in moved:
        _, s = _fold_predictions(_block_permute(data, cols, p), labels, model, pairs, seed, jobs, True)
        diffs.append(_mean_sq(base, s))
    return float(np.sum(diffs) / (len(diffs) + still))


def rank_features(
    tensor: FeatureTensor,
    model,
    features: Sequence[str] | None = None,
    repeats: int = 100,
    seed: int = 0,
    mode: str = "retrain",
    scale: str | None = None,
    k: int = 5,
    jobs: int | None = None,
) -> ImportanceReport:
    """PermFIT scores for ``features`` (default: the immersive group)."""
    if features is None:
        schema = tensor.raw_schema
        features = [schema.names[i] for i in schema.indices(group=FeatureGroup.IMMERSIVE)]
        if not features:
            raise EmptyFeatureSet("schema has no immersive features; pass features explicitly")
    cache: dict = {}
    scores = [permfit(tensor, model, f, repeats, seed, mode, scale, k, jobs, cache=cache) for f in features]
    return ImportanceReport([], list(features), scores, mode, repeats)
