"""Trained-model wrapper, config parsing and on-disk model format.

A :class:`TrainedModel` bundles a classifier with the min-max scaling it
was trained under, so it can be applied directly to unscaled tensors.

Model directory layout::

    model.json    kind, scale, config, schema hash, scaling, classes
    weights.bin   cnn: float32 parameters in ``param_names`` order
    kernels.bin   rocket: kernel table (see KernelSet.to_bytes)
    ridge.bin     rocket: float64 mean, scale, coef (p x K), intercept

kNN models store no weights: ``model.json`` references the training
tensor by path and SHA-256.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from provts.cnn import CnnClassifier, CnnConfig, param_names
from provts.errors import InvalidConfig, SchemaMismatch, ShapeMismatch
from provts.knn import KnnClassifier, KnnConfig
from provts.rocket import KernelSet, RidgeModel, RocketClassifier, RocketConfig
from provts.transform import MinMaxNormalizer, load_tensor
from provts.types import FeatureSchema, FeatureTensor

ModelConfig = Union[KnnConfig, CnnConfig, RocketConfig]
CONFIG_TYPES = {"knn": KnnConfig, "cnn": CnnConfig, "rocket": RocketConfig}
FORMAT_VERSION = 1


def config_from_dict(kind: str, params: dict | None = None) -> ModelConfig:
    if kind not in CONFIG_TYPES:
        raise InvalidConfig(f"unknown model kind {kind!r}; choose from {sorted(CONFIG_TYPES)}")
    try:
        return CONFIG_TYPES[kind](**(params or {}))
    except TypeError as exc:
        raise InvalidConfig(f"bad {kind} config: {exc}") from None


@dataclass
class TrainedModel:
    kind: str
    scale: str
    config: ModelConfig
    normalizer: MinMaxNormalizer
    classifier: KnnClassifier | CnnClassifier | RocketClassifier
    feature_names: tuple[str, ...]
    raw_schema: FeatureSchema
    statistics: tuple[str, ...]
    series_length: int
    schema_hash: str
    seed: int = 0

    @property
    def classes(self) -> np.ndarray:
        return self.classifier.classes_

    def _prepare(self, data: FeatureTensor | np.ndarray) -> np.ndarray:
        if isinstance(data, FeatureTensor):
            if data.schema_hash != self.schema_hash:
                raise SchemaMismatch(
                    f"tensor schema hash {data.schema_hash} != model schema hash {self.schema_hash}"
                )
            data = data.data
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 3 or data.shape[1:] != (self.series_length, len(self.feature_names)):
            raise ShapeMismatch(
                f"model expects (n, {self.series_length}, {len(self.feature_names)}), got {data.shape}"
            )
        return self.normalizer.apply(data)

    def predict(self, data) -> np.ndarray:
        return self.classifier.predict(self._prepare(data))

    def predict_scores(self, data) -> np.ndarray:
        return self.classifier.predict_scores(self._prepare(data))

    def predict_with_confidence(self, data) -> tuple[np.ndarray, np.ndarray]:
        return self.classifier.predict_with_confidence(self._prepare(data))


def train_model(
    tensor: FeatureTensor,
    config: ModelConfig,
    scale: str = "space",
    seed: int = 0,
    jobs: int | None = None,
) -> TrainedModel:
    """Fit scaling on ``tensor`` then train the classifier on it."""
    labels = tensor.labels(scale)
    if np.any(labels < 0):
        raise InvalidConfig("training tensor contains unlabeled samples")
    normalizer = MinMaxNormalizer.fit(tensor.data)
    clf = config.build(seed=seed, jobs=jobs)
    clf.fit(normalizer.apply(tensor.data), labels)
    return TrainedModel(
        config.kind,
        scale,
        config,
        normalizer,
        clf,
        tensor.feature_names,
        tensor.raw_schema,
        tensor.statistics,
        tensor.shape[1],
        tensor.schema_hash,
        seed,
    )


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_model(model: TrainedModel, directory: str | Path, tensor_path: str | Path | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    header = {
        "format": "provts-model",
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "scale": model.scale,
        "seed": model.seed,
        "config": model.config.to_dict(),
        "schema_hash": model.schema_hash,
        "schema": model.raw_schema.to_dict(),
        "feature_names": list(model.feature_names),
        "statistics": list(model.statistics),
        "series_length": model.series_length,
        "normalization": model.normalizer.params().tolist(),
        "classes": [int(c) for c in model.classes],
    }
    clf = model.classifier
    if model.kind == "cnn":
        names = param_names(model.config.conv_layers)
        header["params"] = [{"name": n, "shape": list(clf.params[n].shape)} for n in names]
        header["weights_dtype"] = "<f4"
        blob = b"".join(np.ascontiguousarray(clf.params[n], dtype="<f4").tobytes() for n in names)
        (d / "weights.bin").write_bytes(blob)
    elif model.kind == "rocket":
        r = clf.ridge
        header["ridge"] = {"alpha": r.alpha, "n_features": int(r.mean.size), "cv_scores": {str(k): v for k, v in r.cv_scores.items()}}
        (d / "kernels.bin").write_bytes(clf.kernels.to_bytes())
        blob = b"".join(
            np.ascontiguousarray(a, dtype="<f8").tobytes() for a in (r.mean, r.scale, r.coef, r.intercept)
        )
        (d / "ridge.bin").write_bytes(blob)
    elif model.kind == "knn":
        if tensor_path is None:
            raise InvalidConfig("saving a kNN model needs the training tensor path")
        tp = Path(tensor_path).with_suffix(".bin")
        header["tensor"] = {"path": str(tp.resolve()), "sha256": _sha256(tp)}
    (d / "model.json").write_text(json.dumps(header, indent=1, sort_keys=True) + "\n")
    return d


def load_model(directory: str | Path, jobs: int | None = None) -> TrainedModel:
    d = Path(directory)
    header = json.loads((d / "model.json").read_text())
    if header.get("format") != "provts-model":
        raise SchemaMismatch(f"{d / 'model.json'} is not a provts model")
    kind = header["kind"]
    config = config_from_dict(kind, header["config"])
    classes = np.array(header["classes"], dtype=np.int64)
    seed = int(header["seed"])
    if kind == "cnn":
        blob = np.frombuffer((d / "weights.bin").read_bytes(), dtype="<f4")
        params, pos = {}, 0
        for p in header["params"]:
            size = int(np.prod(p["shape"]))
            params[p["name"]] = blob[pos : pos + size].astype(np.float64).reshape(p["shape"])
            pos += size
        clf = CnnClassifier(config, seed)
        clf.params, clf.classes_ = params, classes
    elif kind == "rocket":
        kernels = KernelSet.from_bytes((d / "kernels.bin").read_bytes())
        p, K = header["ridge"]["n_features"], classes.size
        blob = np.frombuffer((d / "ridge.bin").read_bytes(), dtype="<f8")
        mean, scale = blob[:p].copy(), blob[p : 2 * p].copy()
        coef = blob[2 * p : 2 * p + p * K].reshape(p, K).copy()
        intercept = blob[2 * p + p * K :].copy()
        cv = {float(k): v for k, v in header["ridge"].get("cv_scores", {}).items()}
        clf = RocketClassifier(config, seed, jobs)
        clf.kernels = kernels
        clf.ridge = RidgeModel(classes, mean, scale, coef, intercept, header["ridge"]["alpha"], cv)
    else:
        ref = header["tensor"]
        tp = Path(ref["path"])
        if not tp.exists():
            raise FileNotFoundError(f"kNN training tensor {tp} is missing")
        if _sha256(tp) != ref["sha256"]:
            raise SchemaMismatch(f"kNN training tensor {tp} changed since the model was saved")
        tensor = load_tensor(tp)
        norm = MinMaxNormalizer.from_params(header["normalization"])
        clf = KnnClassifier(config, jobs)
        clf.fit(norm.apply(tensor.data), tensor.labels(header["scale"]))
    return TrainedModel(
        kind,
        header["scale"],
        config,
        MinMaxNormalizer.from_params(header["normalization"]),
        clf,
        tuple(header["feature_names"]),
        FeatureSchema.from_dict(header["schema"]),
        tuple(header["statistics"]),
        int(header["series_length"]),
        header["schema_hash"],
        seed,
    )
