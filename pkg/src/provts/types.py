"""Behavior-log data model: task labels, feature schemas, traces and tensors."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from importlib import resources
from typing import Iterator, Sequence

import numpy as np

from provts.errors import (
    DuplicateFeature,
    EmptyTrial,
    InvalidFrame,
    InvalidLabel,
    NonMonotonicTime,
    RemovedCategory,
    SchemaMismatch,
    UnknownFeature,
)

SCHEMA_VERSION = "v1"
ORIENTATION_TOL = 0.01


class Space(IntEnum):
    SPATIAL = 0
    TEMPORAL = 1
    COMBINED = 2
    INTERACTION = 3


TASK_TYPE_NAMES = (
    "Retrieve Value",
    "Compute Derived Value",
    "Find Extremum",
    "Sort",
    "Determine Range",
    "Characterize Distribution",
    "Find Anomalies",
    "Cluster",
    "Correlate",
    "Exploration",
)

# interaction-panel tasks are numbered (3)0 - (3)4
_MAX_TASK_TYPE = {Space.SPATIAL: 9, Space.TEMPORAL: 9, Space.COMBINED: 9, Space.INTERACTION: 4}


def category_code(space: Space | int, task_type: int) -> int:
    """Encode a (space, task type) pair as ``space * 10 + task_type``.

    Raises:
        RemovedCategory: for combined-space "retrieve value", which is not
            part of the taxonomy.
        InvalidLabel: for out-of-range members.
    """
    try:
        space = Space(space)
    except ValueError:
        raise InvalidLabel(f"unknown space {space!r}") from None
    if not isinstance(task_type, (int, np.integer)) or not 0 <= task_type <= _MAX_TASK_TYPE[space]:
        raise InvalidLabel(f"task type {task_type!r} out of range for {space.name}")
    if space is Space.COMBINED and task_type == 0:
        raise RemovedCategory("combined-space 'retrieve value' (20) is not a valid category")
    return int(space) * 10 + int(task_type)


@dataclass(frozen=True, order=True)
class TaskLabel:
    space: Space
    task_type: int

    def __post_init__(self):
        object.__setattr__(self, "space", Space(self.space))
        category_code(self.space, self.task_type)

    @property
    def code(self) -> int:
        return int(self.space) * 10 + self.task_type

    @property
    def type_name(self) -> str:
        return TASK_TYPE_NAMES[self.task_type]

    @classmethod
    def from_code(cls, code: int) -> TaskLabel:
        if code < 0:
            raise InvalidLabel(f"negative category code {code}")
        space, task_type = divmod(int(code), 10)
        if space > 3:
            raise InvalidLabel(f"unknown space in category code {code}")
        return cls(Space(space), task_type)


def decode_category(code: int) -> TaskLabel:
    return TaskLabel.from_code(code)


def classification_codes() -> list[int]:
    """Category codes used for classification (interaction tasks excluded)."""
    return [
        category_code(s, t)
        for s in (Space.SPATIAL, Space.TEMPORAL, Space.COMBINED)
        for t in range(10)
        if not (s is Space.COMBINED and t == 0)
    ]


def all_codes() -> list[int]:
    return classification_codes() + [category_code(Space.INTERACTION, t) for t in range(5)]


class FeatureGroup(str, Enum):
    INTERACTION = "interaction"
    SELECTION = "selection"
    IMMERSIVE = "immersive"


class FeatureKind(str, Enum):
    BINARY_EVENT = "binary"
    CONTINUOUS = "continuous"


class Environment(str, Enum):
    DESKTOP = "desktop"
    IMMERSIVE = "immersive"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    group: FeatureGroup
    kind: FeatureKind
    environments: frozenset[Environment]


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature declaration for one environment."""

    environment: Environment
    entries: tuple[FeatureSpec, ...]
    version: str = SCHEMA_VERSION

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise DuplicateFeature(f"duplicate feature names: {dup}")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[FeatureSpec]:
        return iter(self.entries)

    @property
    def dim(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def index(self, name: str) -> int:
        for i, e in enumerate(self.entries):
            if e.name == name:
                return i
        raise UnknownFeature(f"feature {name!r} not in {self.environment.value} schema")

    def __contains__(self, name: object) -> bool:
        return any(e.name == name for e in self.entries)

    def indices(self, group: FeatureGroup | None = None, kind: FeatureKind | None = None) -> list[int]:
        return [
            i
            for i, e in enumerate(self.entries)
            if (group is None or e.group == group) and (kind is None or e.kind == kind)
        ]

    def groups(self) -> list[FeatureGroup]:
        return [g for g in FeatureGroup if any(e.group == g for e in self.entries)]

    def select(self, indices: Sequence[int]) -> FeatureSchema:
        return FeatureSchema(self.environment, tuple(self.entries[i] for i in indices), self.version)

    def without_group(self, group: FeatureGroup) -> FeatureSchema:
        return FeatureSchema(
            self.environment, tuple(e for e in self.entries if e.group != group), self.version
        )

    def extended(self, spec: FeatureSpec) -> FeatureSchema:
        if spec.name in self:
            raise DuplicateFeature(f"feature {spec.name!r} already in schema")
        return FeatureSchema(self.environment, self.entries + (spec,), self.version)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "environment": self.environment.value,
            "features": [
                {
                    "order": i,
                    "name": e.name,
                    "group": e.group.value,
                    "kind": e.kind.value,
                    "environments": sorted(env.value for env in e.environments),
                }
                for i, e in enumerate(self.entries)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> FeatureSchema:
        feats = sorted(doc["features"], key=lambda f: f["order"])
        entries = tuple(
            FeatureSpec(
                f["name"],
                FeatureGroup(f["group"]),
                FeatureKind(f["kind"]),
                frozenset(Environment(v) for v in f["environments"]),
            )
            for f in feats
        )
        return cls(Environment(doc["environment"]), entries, doc.get("version", SCHEMA_VERSION))

    @property
    def hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


_BOTH = frozenset({Environment.DESKTOP, Environment.IMMERSIVE})
_DESK = frozenset({Environment.DESKTOP})
_IMM = frozenset({Environment.IMMERSIVE})

_B = FeatureKind.BINARY_EVENT
_C = FeatureKind.CONTINUOUS
_I = FeatureGroup.INTERACTION
_S = FeatureGroup.SELECTION
_M = FeatureGroup.IMMERSIVE

# Master feature table; schema_for() filters by environment, keeping this order.
_FEATURES: tuple[FeatureSpec, ...] = (
    # interaction: input-method flags (immersive only; desktop is always mouse)
    FeatureSpec("method.gesture", _I, _B, _IMM),
    FeatureSpec("method.gaze", _I, _B, _IMM),
    FeatureSpec("method.voice", _I, _B, _IMM),
    # interaction: event flags
    FeatureSpec("evt.click", _I, _B, _DESK),
    FeatureSpec("evt.select_state", _I, _B, _IMM),
    FeatureSpec("evt.deselect", _I, _B, _IMM),
    FeatureSpec("evt.clear", _I, _B, _IMM),
    FeatureSpec("evt.attr_confirmed", _I, _B, _IMM),
    FeatureSpec("evt.attr_recovered", _I, _B, _IMM),
    FeatureSpec("evt.attr_deaths", _I, _B, _IMM),
    FeatureSpec("evt.slider_change", _I, _B, _BOTH),
    FeatureSpec("evt.slider_play", _I, _B, _IMM),
    FeatureSpec("evt.chart_add", _I, _B, _IMM),
    FeatureSpec("evt.chart_remove", _I, _B, _IMM),
    FeatureSpec("evt.map_zoom", _I, _B, _IMM),
    FeatureSpec("evt.panel_grab", _I, _B, _IMM),
    FeatureSpec("evt.help", _I, _B, _IMM),
    FeatureSpec("mouse.x", _I, _C, _DESK),
    FeatureSpec("mouse.y", _I, _C, _DESK),
    # selection
    FeatureSpec("state.index", _S, _C, _BOTH),
    FeatureSpec("state.x", _S, _C, _BOTH),
    FeatureSpec("state.y", _S, _C, _BOTH),
    FeatureSpec("time.value", _S, _C, _BOTH),
    FeatureSpec("chart.slot0", _S, _C, _BOTH),
    FeatureSpec("chart.slot1", _S, _C, _BOTH),
    FeatureSpec("chart.slot2", _S, _C, _BOTH),
    FeatureSpec("chart.slot3", _S, _C, _BOTH),
    # immersive
    *(
        FeatureSpec(f"{vec}.{axis}", _M, _C, _IMM)
        for vec in ("objPosition", "position", "forward", "up")
        for axis in "xyz"
    ),
)


def schema_for(environment: Environment | str) -> FeatureSchema:
    """Return the fixed v1 schema: 12 features for desktop, 36 for immersive."""
    env = Environment(environment)
    return FeatureSchema(env, tuple(f for f in _FEATURES if env in f.environments))


def load_schema_file(environment: Environment | str) -> FeatureSchema:
    """Load the shipped ``schema/<env>.v1.json`` document."""
    env = Environment(environment)
    text = resources.files("provts").joinpath("schema", f"{env.value}.{SCHEMA_VERSION}.json").read_text()
    return FeatureSchema.from_dict(json.loads(text))


ORIENTATION_VECTORS = ("forward", "up")


def _vector_indices(schema: FeatureSchema, prefix: str) -> list[int] | None:
    names = [f"{prefix}.{a}" for a in "xyz"]
    if all(n in schema for n in names):
        return [schema.index(n) for n in names]
    return None


def validate_values(values: np.ndarray, schema: FeatureSchema) -> None:
    """Check a (T, d) block of frame values against the schema invariants.

    Raises:
        SchemaMismatch: wrong width.
        InvalidFrame: non-binary event values, non-finite values, or
            orientation vectors whose norm is off unit length.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[1] != schema.dim:
        raise SchemaMismatch(f"frame width {values.shape[-1]} != schema dimension {schema.dim}")
    if not np.all(np.isfinite(values)):
        raise InvalidFrame("non-finite feature value")
    b = schema.indices(kind=FeatureKind.BINARY_EVENT)
    if b:
        ev = values[:, b]
        if not np.all((ev == 0) | (ev == 1)):
            raise InvalidFrame("binary event feature outside {0, 1}")
    for prefix in ORIENTATION_VECTORS:
        idx = _vector_indices(schema, prefix)
        if idx is None:
            continue
        norms = np.linalg.norm(values[:, idx], axis=1)
        bad = (norms != 0) & (np.abs(norms - 1.0) > ORIENTATION_TOL)
        if np.any(bad):
            row = int(np.argmax(bad))
            raise InvalidFrame(f"{prefix} vector norm {norms[row]:.4f} is not unit length (frame {row})")


@dataclass(frozen=True)
class BehaviorFrame:
    timestamp: float
    values: np.ndarray

    def validate(self, schema: FeatureSchema) -> None:
        validate_values(np.atleast_2d(self.values), schema)


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SessionTrace:
    """One trial of one participant: timestamps (T,) and values (T, d).

    Frames are stored columnar for speed; :attr:`frames` yields
    :class:`BehaviorFrame` views.
    """

    participant_id: str
    environment: Environment
    trial_index: int
    label: TaskLabel | None
    timestamps: np.ndarray
    values: np.ndarray
    schema: FeatureSchema
    sample_rate_hint: float = 30.0

    def __post_init__(self):
        object.__setattr__(self, "environment", Environment(self.environment))
        object.__setattr__(self, "timestamps", _frozen(self.timestamps))
        object.__setattr__(self, "values", _frozen(self.values))
        if self.timestamps.ndim != 1 or self.timestamps.size == 0:
            raise EmptyTrial(f"trace {self.key} has no frames")
        if self.values.shape != (self.timestamps.size, self.schema.dim):
            raise SchemaMismatch(
                f"trace {self.key}: values shape {self.values.shape} does not match "
                f"({self.timestamps.size}, {self.schema.dim})"
            )
        if np.any(np.diff(self.timestamps) < 0):
            raise NonMonotonicTime(f"trace {self.key}: timestamps decrease")

    @property
    def key(self) -> tuple[str, int]:
        return (self.participant_id, self.trial_index)

    def __len__(self) -> int:
        return int(self.timestamps.size)

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])

    @property
    def frames(self) -> Iterator[BehaviorFrame]:
        for t, v in zip(self.timestamps, self.values):
            yield BehaviorFrame(float(t), v)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.schema.index(name)]

    def validate(self) -> None:
        validate_values(self.values, self.schema)

    def replace(self, **changes) -> SessionTrace:
        fields = dict(
            participant_id=self.participant_id,
            environment=self.environment,
            trial_index=self.trial_index,
            label=self.label,
            timestamps=self.timestamps,
            values=self.values,
            schema=self.schema,
            sample_rate_hint=self.sample_rate_hint,
        )
        fields.update(changes)
        return SessionTrace(**fields)

    def slice(self, start: int, stop: int) -> SessionTrace:
        return self.replace(timestamps=self.timestamps[start:stop], values=self.values[start:stop])


@dataclass(frozen=True, eq=False)
class FeatureTensor:
    """Fixed-length dataset of shape (n, l, d_out).

    ``data`` holds the per-segment statistics before min-max scaling;
    ``normalization`` holds (min, max) per derived feature fitted on this
    set, and :meth:`normalized` applies it.  Training code refits the
    scaling on each training fold instead of trusting these global values.
    """

    data: np.ndarray
    labels_task: np.ndarray
    labels_space: np.ndarray
    feature_names: tuple[str, ...]
    raw_schema: FeatureSchema
    statistics: tuple[str, ...]
    normalization: np.ndarray | None = None
    trace_keys: tuple[tuple[str, int], ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, np.float64))
        object.__setattr__(self, "labels_task", _frozen(self.labels_task, np.int64))
        object.__setattr__(self, "labels_space", _frozen(self.labels_space, np.int64))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if self.normalization is not None:
            object.__setattr__(self, "normalization", _frozen(self.normalization, np.float64))
        if self.data.ndim != 3:
            raise SchemaMismatch(f"tensor must be 3-D, got shape {self.data.shape}")
        n, _, d = self.data.shape
        if len(self.feature_names) != d:
            raise SchemaMismatch(f"{len(self.feature_names)} feature names for width {d}")
        if self.labels_task.shape != (n,) or self.labels_space.shape != (n,):
            raise SchemaMismatch("label arrays must have one entry per sample")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.data.shape)

    def __len__(self) -> int:
        return int(self.data.shape[0])

    def labels(self, scale: str) -> np.ndarray:
        if scale == "space":
            return self.labels_space
        if scale == "task":
            return self.labels_task
        raise ValueError(f"unknown label scale {scale!r}")

    def normalized(self) -> np.ndarray:
        from provts.transform import MinMaxNormalizer

        if self.normalization is None:
            return MinMaxNormalizer.fit(self.data).apply(self.data)
        return MinMaxNormalizer(self.normalization[:, 0], self.normalization[:, 1]).apply(self.data)

    def raw_feature_columns(self, raw_name: str) -> list[int]:
        """Derived-feature column indices computed from one raw feature."""
        return [i for i, n in enumerate(self.feature_names) if n.rsplit(":", 1)[0] == raw_name]

    def take(self, idx: Sequence[int] | np.ndarray) -> FeatureTensor:
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureTensor(
            self.data[idx],
            self.labels_task[idx],
            self.labels_space[idx],
            self.feature_names,
            self.raw_schema,
            self.statistics,
            self.normalization,
            tuple(self.trace_keys[i] for i in idx) if self.trace_keys else (),
        )

    def select_raw_features(self, raw_indices: Sequence[int]) -> FeatureTensor:
        """Keep only derived columns of the given raw features, in schema order."""
        keep_names = {self.raw_schema.entries[i].name for i in raw_indices}
        cols = [i for i, n in enumerate(self.feature_names) if n.rsplit(":", 1)[0] in keep_names]
        norm = None if self.normalization is None else self.normalization[cols]
        return FeatureTensor(
            self.data[:, :, cols],
            self.labels_task,
            self.labels_space,
            tuple(self.feature_names[i] for i in cols),
            self.raw_schema.select(sorted(raw_indices)),
            self.statistics,
            norm,
            self.trace_keys,
        )

    @property
    def schema_hash(self) -> str:
        payload = json.dumps([self.raw_schema.hash, list(self.feature_names)], separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]
