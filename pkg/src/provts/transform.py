"""Fixed-length transformation of variable-length traces.

Each trace of T frames is split into ``l`` contiguous segments whose
boundaries are ``ceil(T*k/l)``; each segment contributes its per-feature
sum, mean and (population) standard deviation.  Empty segments, which
occur when T < l, are zero rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from provts.errors import InvalidConfig, SchemaMismatch
from provts.types import Environment, FeatureSchema, FeatureTensor, SessionTrace, schema_for

STATISTICS = ("accumulate", "mean", "std")
_SUFFIX = {"accumulate": "sum", "mean": "mean", "std": "std"}


@dataclass(frozen=True)
class TransformConfig:
    l: int = 100
    statistics: tuple[str, ...] = STATISTICS
    normalization: str = "minmax_global"

    def __post_init__(self):
        object.__setattr__(self, "statistics", tuple(self.statistics))
        if self.l < 1:
            raise InvalidConfig("segment count l must be >= 1")
        if not self.statistics:
            raise InvalidConfig("at least one statistic is required")
        unknown = set(self.statistics) - set(STATISTICS)
        if unknown:
            raise InvalidConfig(f"unknown statistics {sorted(unknown)}")
        if self.normalization != "minmax_global":
            raise InvalidConfig(f"unknown normalization {self.normalization!r}")


def segment_bounds(T: int, l: int) -> np.ndarray:
    """Boundaries ``b`` with segment k = frames [b[k], b[k+1])."""
    k = np.arange(l + 1, dtype=np.int64)
    return -((-T * k) // l)


def _as_values(trace: SessionTrace | np.ndarray) -> np.ndarray:
    if isinstance(trace, SessionTrace):
        return trace.values
    values = np.asarray(trace, dtype=np.float64)
    return values[:, None] if values.ndim == 1 else values


def segment_accumulate(trace: SessionTrace | np.ndarray, l: int) -> np.ndarray:
    """Sum frames per segment -> (l, d)."""
    values = _as_values(trace)
    T, d = values.shape
    bounds = segment_bounds(T, l)
    csum = np.zeros((T + 1, d))
    np.cumsum(values, axis=0, out=csum[1:])
    return csum[bounds[1:]] - csum[bounds[:-1]]


def segment_stats(
    trace: SessionTrace | np.ndarray, l: int, stats: Sequence[str] = ("mean", "std")
) -> np.ndarray:
    """Per-segment statistics, concatenated statistic-major -> (l, d * len(stats)).

    The standard deviation divides by the segment size and is zero for
    segments holding fewer than two frames; means of empty segments are zero.
    """
    values = _as_values(trace)
    T, d = values.shape
    bounds = segment_bounds(T, l)
    sizes = np.diff(bounds)
    blocks = []
    need_mean = any(s in ("mean", "std") for s in stats)
    if need_mean:
        sums = segment_accumulate(values, l)
        safe = np.maximum(sizes, 1)[:, None]
        means = sums / safe
    for s in stats:
        if s == "accumulate":
            blocks.append(segment_accumulate(values, l))
        elif s == "mean":
            blocks.append(means)
        elif s == "std":
            # two-pass on deviations from the segment mean; no cancellation
            seg_of_frame = np.repeat(np.arange(l), sizes)
            dev = values - means[seg_of_frame]
            sq = np.zeros((l, d))
            np.add.at(sq, seg_of_frame, dev * dev)
            var = sq / np.maximum(sizes, 1)[:, None]
            std = np.sqrt(var)
            std[sizes <= 1] = 0.0
            blocks.append(std)
        else:
            raise InvalidConfig(f"unknown statistic {s!r}")
    return np.concatenate(blocks, axis=1) if blocks else np.zeros((l, 0))


def derived_feature_names(schema: FeatureSchema, stats: Sequence[str] = STATISTICS) -> list[str]:
    return [f"{name}:{_SUFFIX[s]}" for s in stats for name in schema.names]


def transform_trace(trace: SessionTrace | np.ndarray, config: TransformConfig = TransformConfig()) -> np.ndarray:
    """Transform a single trace into an (l, d * |stats|) block."""
    return segment_stats(trace, config.l, config.statistics)


@dataclass(frozen=True)
class MinMaxNormalizer:
    """Per-column min-max scaling with clamping to [0, 1].

    Constant columns (max == min) map to 0.
    """

    mins: np.ndarray
    maxs: np.ndarray

    @classmethod
    def fit(cls, data: np.ndarray) -> MinMaxNormalizer:
        flat = np.asarray(data, dtype=np.float64)
        flat = flat.reshape(-1, flat.shape[-1])
        if flat.shape[0] == 0:
            d = flat.shape[-1]
            return cls(np.zeros(d), np.zeros(d))
        return cls(flat.min(axis=0), flat.max(axis=0))

    def apply(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data, dtype=np.float64)
        if data.shape[-1] != self.mins.size:
            raise SchemaMismatch(f"normalizer width {self.mins.size} != data width {data.shape[-1]}")
        span = self.maxs - self.mins
        live = span > 0
        out = np.zeros_like(data)
        out[..., live] = (data[..., live] - self.mins[live]) / span[live]
        return np.clip(out, 0.0, 1.0)

    def params(self) -> np.ndarray:
        return np.stack([self.mins, self.maxs], axis=1)

    @classmethod
    def from_params(cls, params) -> MinMaxNormalizer:
        p = np.asarray(params, dtype=np.float64).reshape(-1, 2)
        return cls(p[:, 0].copy(), p[:, 1].copy())


def fit_normalizer(tensor_train: FeatureTensor | np.ndarray) -> MinMaxNormalizer:
    data = tensor_train.data if isinstance(tensor_train, FeatureTensor) else tensor_train
    return MinMaxNormalizer.fit(data)


def sort_traces(traces: Sequence[SessionTrace]) -> list[SessionTrace]:
    return sorted(traces, key=lambda t: (t.participant_id, t.trial_index))


def build_dataset(
    traces: Sequence[SessionTrace],
    config: TransformConfig = TransformConfig(),
    schema: FeatureSchema | None = None,
) -> FeatureTensor:
    """Stack transformed traces into a FeatureTensor, preserving input order.

    Unlabeled traces get label -1 at both scales.  With no traces and no
    schema, the immersive schema is assumed.
    """
    if schema is None:
        schema = traces[0].schema if traces else schema_for(Environment.IMMERSIVE)
    for t in traces:
        if t.schema.names != schema.names:
            raise SchemaMismatch(f"trace {t.key} schema differs from dataset schema")
    names = derived_feature_names(schema, config.statistics)
    d_out = len(names)
    data = np.zeros((len(traces), config.l, d_out))
    for i, t in enumerate(traces):
        data[i] = transform_trace(t, config)
    labels_task = np.array([t.label.code if t.label else -1 for t in traces], dtype=np.int64)
    labels_space = np.array([int(t.label.space) if t.label else -1 for t in traces], dtype=np.int64)
    norm = MinMaxNormalizer.fit(data).params()
    return FeatureTensor(
        data,
        labels_task,
        labels_space,
        tuple(names),
        schema,
        config.statistics,
        norm,
        tuple(t.key for t in traces),
    )


# -- persistence ------------------------------------------------------------
# <stem>.bin: little-endian float32, row-major (n, l, d_out)
# <stem>.json: header with shape, schema, normalization, labels


def save_tensor(tensor: FeatureTensor, path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    bin_path = path.with_suffix(".bin")
    json_path = path.with_suffix(".json")
    bin_path.write_bytes(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    header = {
        "format": "provts-tensor",
        "version": 1,
        "dtype": "<f4",
        "shape": list(tensor.shape),
        "statistics": list(tensor.statistics),
        "feature_names": list(tensor.feature_names),
        "schema": tensor.raw_schema.to_dict(),
        "schema_hash": tensor.schema_hash,
        "normalization": None if tensor.normalization is None else tensor.normalization.tolist(),
        "labels_task": tensor.labels_task.tolist(),
        "labels_space": tensor.labels_space.tolist(),
        "trace_keys": [list(k) for k in tensor.trace_keys],
        "notes": [f"d_out = {len(tensor.statistics)} statistics x {tensor.raw_schema.dim} raw features; "
                  "no narrower derived feature set is applied"],
    }
    json_path.write_text(json.dumps(header, indent=1) + "\n")
    return bin_path, json_path


def load_tensor(path: str | Path) -> FeatureTensor:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    shape = tuple(header["shape"])
    raw = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f4")
    if raw.size != int(np.prod(shape)):
        raise SchemaMismatch(f"tensor blob holds {raw.size} values, header says {shape}")
    norm = header.get("normalization")
    return FeatureTensor(
        raw.reshape(shape).astype(np.float64),
        np.array(header["labels_task"], dtype=np.int64),
        np.array(header["labels_space"], dtype=np.int64),
        tuple(header["feature_names"]),
        FeatureSchema.from_dict(header["schema"]),
        tuple(header["statistics"]),
        None if norm is None else np.array(norm, dtype=np.float64),
        tuple((k[0], int(k[1])) for k in header.get("trace_keys", [])),
    )
