"""Seeded synthetic behavior sessions.

Behavior is modelled as a sequence of dwells on the three panels of the
layout (choropleth map, line charts, interaction panel).  During a dwell
the head wanders around a viewing spot in front of the panel, gaze
(forward) points at a wandering anchor on the panel with Gaussian jitter,
and interaction events arrive as Poisson processes whose rates depend on
the archetype and on the panel being looked at.  Selection state (selected
US state, time slider, line-chart slots) evolves with those events.

Every trace is a pure function of ``(config, seed, class index, sample
index)``; classes draw from independently derived seed streams.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from provts.errors import DuplicateFeature, InvalidConfig
from provts.types import (
    Environment,
    FeatureGroup,
    FeatureKind,
    FeatureSpec,
    SessionTrace,
    Space,
    TaskLabel,
    schema_for,
)

FRAME_RATE = {Environment.IMMERSIVE: 30.0, Environment.DESKTOP: 10.0}

# Axis-aligned panel boxes in world metres (x right, y up, z forward).
REGIONS = {
    "choropleth": ((-0.9, 0.9), (0.9, 1.9), (1.95, 2.05)),
    "linechart": ((1.95, 2.05), (0.9, 1.9), (-0.3, 1.5)),
    "panel": ((-1.65, -1.55), (0.8, 1.4), (0.4, 1.2)),
}
# Where a user stands to look at each panel.
VIEW_SPOTS = {
    "choropleth": (0.0, 1.6, 0.8),
    "linechart": (0.9, 1.6, 0.6),
    "panel": (-0.6, 1.6, 0.8),
}
# Alternating (multi-panel) behavior is watched from one spot that sees
# every panel, turning the head instead of walking.
OVERVIEW_SPOT = (0.3, 1.6, -0.2)
# Desktop screen boxes in normalized screen coordinates.
SCREEN_REGIONS = {
    "choropleth": ((0.0, 0.6), (0.0, 0.7)),
    "linechart": ((0.6, 1.0), (0.0, 0.7)),
    "panel": ((0.0, 1.0), (0.7, 1.0)),
}

# Panel each event belongs to; off-panel events fire at a reduced rate.
EVENT_REGION = {
    "evt.select_state": "choropleth",
    "evt.deselect": "choropleth",
    "evt.map_zoom": "choropleth",
    "evt.slider_change": "linechart",
    "evt.slider_play": "linechart",
    "evt.chart_add": "linechart",
    "evt.chart_remove": "linechart",
    "evt.clear": "panel",
    "evt.attr_confirmed": "panel",
    "evt.attr_recovered": "panel",
    "evt.attr_deaths": "panel",
    "evt.panel_grab": "panel",
    "evt.help": "panel",
}
OFF_REGION_FACTOR = 0.15
DWELL_SHAPE = 4.0
N_STATES = 50
# Fixed map layout: state k (1-based) sits at column (k - 0.5) / N_STATES
# and a fixed pseudo-random row.
STATE_ROWS = np.random.default_rng(50).uniform(0.1, 0.9, N_STATES)
OBJ_HOLD_S = 0.6


@dataclass(frozen=True)
class ArchetypeConfig:
    """Behavior profile of one task category."""

    category_code: int
    duration_s: tuple[float, float] = (8.0, 20.0)
    event_rates: dict[str, float] = field(default_factory=dict)
    regions: dict[str, float] = field(default_factory=lambda: {"choropleth": 1.0})
    alternate: bool = False
    dwell_s: float = 3.0
    selection_center: float = 0.5
    selection_spread: float = 0.15
    slider_range: tuple[float, float] = (0.0, 1.0)
    method_probs: tuple[float, float, float] = (0.5, 0.4, 0.1)
    noise: float = 0.01
    head_speed: float = 0.15
    rate_jitter: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "duration_s", tuple(float(x) for x in self.duration_s))
        object.__setattr__(self, "slider_range", tuple(float(x) for x in self.slider_range))
        object.__setattr__(self, "method_probs", tuple(float(x) for x in self.method_probs))
        lo, hi = self.duration_s
        if not 2.0 <= lo <= hi <= 300.0:
            raise InvalidConfig(f"duration range {self.duration_s} must lie within [2, 300] s")
        if any(r < 0 for r in self.event_rates.values()):
            raise InvalidConfig("event rates must be non-negative")
        unknown = set(self.event_rates) - set(EVENT_REGION)
        if unknown:
            raise InvalidConfig(f"unknown event features {sorted(unknown)}")
        if not self.regions or any(w < 0 for w in self.regions.values()) or sum(self.regions.values()) <= 0:
            raise InvalidConfig("region weights must be non-negative with a positive total")
        if set(self.regions) - set(REGIONS):
            raise InvalidConfig(f"unknown regions {sorted(set(self.regions) - set(REGIONS))}")
        if self.noise < 0 or self.head_speed < 0 or self.rate_jitter < 0:
            raise InvalidConfig("noise levels must be non-negative")
        if self.dwell_s <= 0:
            raise InvalidConfig("dwell_s must be positive")
        p = self.method_probs
        if len(p) != 3 or min(p) < 0 or sum(p) <= 0:
            raise InvalidConfig("method_probs must be three non-negative weights")
        TaskLabel.from_code(self.category_code)

    @property
    def label(self) -> TaskLabel:
        return TaskLabel.from_code(self.category_code)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["duration_s"] = list(self.duration_s)
        d["slider_range"] = list(self.slider_range)
        d["method_probs"] = list(self.method_probs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ArchetypeConfig:
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None


def save_archetypes(configs: Sequence[ArchetypeConfig], path: str | Path) -> None:
    Path(path).write_text(json.dumps([c.to_dict() for c in configs], indent=2) + "\n")


def load_archetypes(path: str | Path) -> list[ArchetypeConfig]:
    return [ArchetypeConfig.from_dict(d) for d in json.loads(Path(path).read_text())]


# -- presets ------------------------------------------------------------------

_SPACE_BASE = {
    Space.SPATIAL: dict(
        regions={"choropleth": 0.95, "panel": 0.05},
        event_rates={"evt.select_state": 0.6, "evt.deselect": 0.2, "evt.map_zoom": 0.2, "evt.slider_change": 0.05},
    ),
    Space.TEMPORAL: dict(
        regions={"linechart": 0.95, "panel": 0.05},
        event_rates={
            "evt.slider_change": 0.5,
            "evt.slider_play": 0.1,
            "evt.chart_add": 0.3,
            "evt.chart_remove": 0.1,
            "evt.select_state": 0.05,
        },
    ),
    Space.COMBINED: dict(
        regions={"choropleth": 1.0, "linechart": 1.0, "panel": 1.0},
        alternate=True,
        dwell_s=0.8,
        event_rates={
            "evt.select_state": 0.3,
            "evt.slider_change": 0.3,
            "evt.chart_add": 0.15,
            "evt.attr_confirmed": 0.1,
            "evt.attr_recovered": 0.1,
            "evt.attr_deaths": 0.1,
            "evt.panel_grab": 0.05,
        },
    ),
    Space.INTERACTION: dict(
        regions={"panel": 1.0},
        duration_s=(3.0, 6.0),
        event_rates={"evt.attr_confirmed": 0.3, "evt.attr_recovered": 0.3, "evt.attr_deaths": 0.3, "evt.clear": 0.2},
    ),
}

# Task-type modifiers: duration range, dwell length, multipliers on the
# space's base rates, extra event rates, and where on the map selections fall.
_TYPE_PROFILE = {
    0: dict(duration_s=(4.0, 9.0), dwell=3.0, mult=0.6, extra={}),
    1: dict(duration_s=(8.0, 16.0), dwell=2.5, mult=1.6, extra={"evt.deselect": 0.2}),
    2: dict(duration_s=(6.0, 14.0), dwell=2.0, mult=1.0, extra={"evt.slider_change": 0.4}),
    3: dict(duration_s=(10.0, 20.0), dwell=2.0, mult=1.0, extra={"evt.chart_add": 0.5, "evt.chart_remove": 0.3}),
    4: dict(duration_s=(8.0, 16.0), dwell=3.0, mult=0.8, extra={"evt.slider_play": 0.4}),
    5: dict(duration_s=(10.0, 22.0), dwell=4.0, mult=0.8, extra={"evt.map_zoom": 0.4}),
    6: dict(duration_s=(6.0, 14.0), dwell=1.0, mult=1.2, extra={"evt.deselect": 0.4}),
    7: dict(duration_s=(10.0, 20.0), dwell=3.0, mult=1.4, extra={"evt.clear": 0.3}),
    8: dict(duration_s=(12.0, 24.0), dwell=1.5, mult=1.0, extra={"evt.attr_confirmed": 0.2, "evt.attr_deaths": 0.2}),
    9: dict(duration_s=(16.0, 30.0), dwell=2.5, mult=1.2, extra={"evt.help": 0.2, "evt.panel_grab": 0.2}),
}


def archetype(code: int, *, typed: bool = True) -> ArchetypeConfig:
    """Build the preset archetype for a category code.

    With ``typed=False`` only the visual-space profile is used, so all task
    types of a space share one behavior model.
    """
    label = TaskLabel.from_code(code)
    base = dict(_SPACE_BASE[label.space])
    rates = dict(base.pop("event_rates"))
    kw: dict = dict(base)
    if typed:
        prof = _TYPE_PROFILE[label.task_type]
        rates = {k: v * prof["mult"] for k, v in rates.items()}
        for k, v in prof["extra"].items():
            rates[k] = rates.get(k, 0.0) + v
        kw["duration_s"] = prof["duration_s"]
        kw["dwell_s"] = prof["dwell"] if not kw.get("alternate") else min(prof["dwell"], 0.8)
        kw["selection_center"] = (label.task_type + 0.5) / 10.0
        kw["selection_spread"] = 0.08
        lo = 0.1 * label.task_type
        kw["slider_range"] = (lo, min(1.0, lo + 0.3))
    return ArchetypeConfig(category_code=code, event_rates=rates, **kw)


SPACES3_CODES = (5, 15, 25)
# Open sessions: a short opening task followed by progressively longer
# ones, so every later task eventually dominates the cumulative prefix
# that growing-window annotation classifies.
OPENMIX_CODES = (25, 5, 15)
OPENMIX_DURATIONS = ((8.0, 12.0), (24.0, 32.0), (48.0, 64.0))


def preset(name: str) -> list[ArchetypeConfig]:
    """Preset archetype suites: "spaces3", "tasks30", "openmix".

    "openmix" lists its archetypes in session order.
    """
    if name == "spaces3":
        return [archetype(c) for c in SPACES3_CODES]
    if name == "openmix":
        return [replace(archetype(c), duration_s=d) for c, d in zip(OPENMIX_CODES, OPENMIX_DURATIONS)]
    if name == "tasks30":
        from provts.types import classification_codes

        return [archetype(c) for c in classification_codes()]
    raise InvalidConfig(f"unknown preset {name!r}")


# -- generation ---------------------------------------------------------------


def _seed_seq(seed: int, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) % (1 << 64), *[int(k) for k in keys]])


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n == 0, 1.0, n)


def _sample_in(box, rng) -> np.ndarray:
    return np.array([rng.uniform(lo, hi) for lo, hi in box])


def _dwell_schedule(cfg: ArchetypeConfig, T: int, fps: float, rng) -> list[tuple[int, int, str]]:
    names = sorted(cfg.regions)
    weights = np.array([cfg.regions[n] for n in names], dtype=float)
    weights /= weights.sum()
    order = [n for n in ("choropleth", "linechart", "panel") if cfg.regions.get(n, 0) > 0]
    segs, pos, k = [], 0, int(rng.integers(len(order))) if cfg.alternate else 0
    while pos < T:
        if cfg.alternate:
            region = order[k % len(order)]
            k += 1
        else:
            region = names[int(rng.choice(len(names), p=weights))]
        # gamma(4) dwell: mean dwell_s, fewer very short or very long looks
        dwell = max(0.3, rng.gamma(DWELL_SHAPE, cfg.dwell_s / DWELL_SHAPE))
        n = max(1, int(round(dwell * fps)))
        segs.append((pos, min(T, pos + n), region))
        pos += n
    return segs


def _map_point(sx: float, sy: float) -> np.ndarray:
    (x0, x1), (y0, y1), (z0, z1) = REGIONS["choropleth"]
    return np.array([x0 + sx * (x1 - x0), y0 + sy * (y1 - y0), 0.5 * (z0 + z1)])


def _chart_point(slot: int, tval: float) -> np.ndarray:
    (x0, x1), (y0, y1), (z0, z1) = REGIONS["linechart"]
    y = y1 - (slot + 0.5) * (y1 - y0) / 4
    return np.array([0.5 * (x0 + x1), y, z0 + tval * (z1 - z0)])


def _panel_point(rng) -> np.ndarray:
    return _sample_in(REGIONS["panel"], rng)


def generate_trace(
    cfg: ArchetypeConfig,
    rng: np.random.Generator,
    environment: Environment = Environment.IMMERSIVE,
    participant_id: str = "p000",
    trial_index: int = 0,
    labeled: bool = True,
) -> SessionTrace:
    env = Environment(environment)
    schema = schema_for(env)
    fps = FRAME_RATE[env]
    col = {n: i for i, n in enumerate(schema.names)}
    dur = rng.uniform(*cfg.duration_s)
    T = int(np.floor(dur * fps)) + 1
    t = np.arange(T) / fps
    values = np.zeros((T, schema.dim))

    segs = _dwell_schedule(cfg, T, fps, rng)
    region_of = np.empty(T, dtype=object)
    for a, b, r in segs:
        region_of[a:b] = r

    # Poisson event flags, one Bernoulli draw per frame and event type
    jitter = np.exp(rng.normal(0.0, cfg.rate_jitter)) if cfg.rate_jitter > 0 else 1.0
    events: dict[str, np.ndarray] = {}
    for name in sorted(cfg.event_rates):
        rate = cfg.event_rates[name] * jitter
        on = np.where(region_of == EVENT_REGION[name], 1.0, OFF_REGION_FACTOR)
        p = 1.0 - np.exp(-rate * on / fps)
        events[name] = rng.random(T) < p

    # selection state machine over event frames
    state = np.zeros((T, 3))  # index, x, y
    tval = np.zeros(T)
    slots = np.zeros((T, 4))
    obj = np.zeros((T, 3))
    held = np.zeros(T, dtype=bool)
    hold = max(1, int(round(OBJ_HOLD_S * fps)))
    cur_state = np.zeros(3)
    cur_t = rng.uniform(*cfg.slider_range)
    cur_slots = np.zeros(4)
    playing = 0
    event_frames = np.zeros(T, dtype=bool)
    for ev in events.values():
        event_frames |= ev
    fired: dict[int, list[str]] = {}
    for name, ev in events.items():
        for i in np.flatnonzero(ev):
            fired.setdefault(int(i), []).append(name)
    for i in range(T):
        names = fired.get(i)
        if names:
            for name in names:
                target = None
                if name == "evt.select_state":
                    sx = float(np.clip(rng.normal(cfg.selection_center, cfg.selection_spread), 0, 1))
                    idx = 1 + min(N_STATES - 1, int(sx * N_STATES))
                    sx, sy = (idx - 0.5) / N_STATES, float(STATE_ROWS[idx - 1])
                    cur_state = np.array([idx, sx, sy])
                    target = _map_point(sx, sy)
                elif name == "evt.deselect":
                    if cur_state[0]:
                        target = _map_point(cur_state[1], cur_state[2])
                    cur_state = np.zeros(3)
                elif name == "evt.map_zoom":
                    target = _map_point(cfg.selection_center, rng.uniform(0.1, 0.9))
                elif name == "evt.clear":
                    cur_state = np.zeros(3)
                    cur_slots = np.zeros(4)
                    target = _panel_point(rng)
                elif name == "evt.slider_change":
                    cur_t = float(rng.uniform(*cfg.slider_range))
                    target = _chart_point(3, cur_t)
                elif name == "evt.slider_play":
                    playing = int(2 * fps)
                    target = _chart_point(3, cur_t)
                elif name == "evt.chart_add":
                    free = np.flatnonzero(cur_slots == 0)
                    k = int(free[0]) if free.size else 3
                    if not cur_state[0]:
                        sx = float(np.clip(rng.normal(cfg.selection_center, cfg.selection_spread), 0, 1))
                    cur_slots[k] = cur_state[0] or 1 + min(N_STATES - 1, int(sx * N_STATES))
                    target = _chart_point(k, cur_t)
                elif name == "evt.chart_remove":
                    used = np.flatnonzero(cur_slots)
                    if used.size:
                        cur_slots[used[-1]] = 0
                        target = _chart_point(int(used[-1]), cur_t)
                else:
                    target = _panel_point(rng)
                if target is not None:
                    obj[i : i + hold] = target + rng.normal(0.0, 0.01, 3)
                    held[i : i + hold] = True
        if playing:
            lo, hi = cfg.slider_range
            cur_t = lo + (cur_t - lo + (hi - lo) / (2 * fps)) % max(hi - lo, 1e-9)
            playing -= 1
        state[i] = cur_state
        tval[i] = cur_t
        slots[i] = cur_slots

    for name, ev in events.items():
        if name in col:
            values[:, col[name]] = ev
    if env is Environment.IMMERSIVE:
        methods = ["method.gesture", "method.gaze", "method.voice"]
        probs = np.array(cfg.method_probs) / sum(cfg.method_probs)
        for i in np.flatnonzero(event_frames):
            values[i, col[methods[int(rng.choice(3, p=probs))]]] = 1.0
    else:
        click = np.zeros(T, dtype=bool)
        for name, ev in events.items():
            if name != "evt.slider_change":
                click |= ev
        values[:, col["evt.click"]] = click

    for j, name in enumerate(("state.index", "state.x", "state.y")):
        values[:, col[name]] = state[:, j]
    values[:, col["time.value"]] = tval
    for k in range(4):
        values[:, col[f"chart.slot{k}"]] = slots[:, k]

    dt = 1.0 / fps
    if env is Environment.IMMERSIVE:
        head = np.zeros((T, 3))
        gaze = np.zeros((T, 3))
        for a, b, r in segs:
            spot = np.array(OVERVIEW_SPOT if cfg.alternate else VIEW_SPOTS[r]) + rng.normal(0.0, [0.25, 0.03, 0.25])
            anchor = _sample_in(REGIONS[r], rng)
            n = b - a
            # Ornstein-Uhlenbeck walk of the head around its viewing spot
            steps = rng.normal(0.0, cfg.head_speed * np.sqrt(dt), (n, 3)) * [1.0, 0.2, 1.0]
            h = np.empty((n, 3))
            h_prev = head[a - 1] if a > 0 else spot
            for k in range(n):
                h_prev = h_prev + 2.0 * dt * (spot - h_prev) + steps[k]
                h[k] = h_prev
            head[a:b] = h
            drift = np.cumsum(rng.normal(0.0, 0.05 * np.sqrt(dt), (n, 3)), axis=0)
            lo = np.array([bx[0] for bx in REGIONS[r]])
            hi = np.array([bx[1] for bx in REGIONS[r]])
            gaze[a:b] = np.clip(anchor + drift, lo, hi)
        # between event holds the tracked object is whatever the pointer rests on
        obj[~held] = gaze[~held]
        head += rng.normal(0.0, 0.1 * cfg.noise, head.shape)
        fwd = _unit(gaze - head + rng.normal(0.0, cfg.noise, (T, 3)))
        up0 = np.array([0.0, 1.0, 0.0]) + rng.normal(0.0, cfg.noise, (T, 3))
        up = _unit(up0 - np.sum(up0 * fwd, axis=1, keepdims=True) * fwd)
        for vec, arr in (("objPosition", obj), ("position", head), ("forward", fwd), ("up", up)):
            for j, axis in enumerate("xyz"):
                values[:, col[f"{vec}.{axis}"]] = arr[:, j]
    else:
        mouse = np.zeros((T, 2))
        for a, b, r in segs:
            (x0, x1), (y0, y1) = SCREEN_REGIONS[r]
            start = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
            walk = np.cumsum(rng.normal(0.0, 0.1 * np.sqrt(dt), (b - a, 2)), axis=0)
            mouse[a:b] = np.clip(start + walk, [x0, y0], [x1, y1])
        values[:, col["mouse.x"]] = mouse[:, 0]
        values[:, col["mouse.y"]] = mouse[:, 1]

    return SessionTrace(
        participant_id,
        env,
        trial_index,
        cfg.label if labeled else None,
        t,
        values,
        schema,
        fps,
    )


def generate(
    configs: ArchetypeConfig | Sequence[ArchetypeConfig],
    n_per_class: int,
    seed: int,
    environment: Environment | str = Environment.IMMERSIVE,
) -> list[SessionTrace]:
    """Generate ``n_per_class`` labeled traces for every archetype.

    Trace ``i`` of archetype ``c`` is participant ``s{i:03d}``, trial ``c``;
    its random stream is derived from ``(seed, category_code, i)`` alone.
    """
    if isinstance(configs, ArchetypeConfig):
        configs = [configs]
    if n_per_class < 1:
        raise InvalidConfig("n_per_class must be >= 1")
    if not configs:
        raise InvalidConfig("no archetypes given")
    codes = [c.category_code for c in configs]
    if len(set(codes)) != len(codes):
        raise InvalidConfig("archetype category codes must be unique")
    env = Environment(environment)
    traces = []
    for ci, cfg in enumerate(configs):
        for i in range(n_per_class):
            rng = np.random.default_rng(_seed_seq(seed, cfg.category_code, i))
            traces.append(generate_trace(cfg, rng, env, f"s{i:03d}", ci))
    return traces


@dataclass(frozen=True)
class MixSegment:
    t_start_s: float
    t_end_s: float
    category_code: int

    @property
    def space(self) -> int:
        return self.category_code // 10


def generate_openmix(
    configs: Sequence[ArchetypeConfig],
    n_traces: int,
    seed: int,
    environment: Environment | str = Environment.IMMERSIVE,
    order: Sequence[int] | None = None,
) -> list[tuple[SessionTrace, list[MixSegment]]]:
    """Unlabeled traces made of one segment per archetype, back to back.

    ``order`` lists archetype indices; by default the archetypes are used
    in the given order.  Returns each trace with its ground-truth segments.
    """
    env = Environment(environment)
    order = list(range(len(configs))) if order is None else list(order)
    fps = FRAME_RATE[env]
    out = []
    for i in range(n_traces):
        parts, truth, offset = [], [], 0.0
        for j, ci in enumerate(order):
            cfg = configs[ci]
            rng = np.random.default_rng(_seed_seq(seed, 1000 + j, cfg.category_code, i))
            tr = generate_trace(cfg, rng, env, f"open{i:03d}", 0, labeled=False)
            ts = tr.timestamps + offset
            parts.append((ts, tr.values))
            truth.append(MixSegment(float(ts[0]), float(ts[-1]), cfg.category_code))
            offset = float(ts[-1]) + 1.0 / fps
        trace = SessionTrace(
            f"open{i:03d}",
            env,
            0,
            None,
            np.concatenate([p[0] for p in parts]),
            np.concatenate([p[1] for p in parts]),
            schema_for(env),
            fps,
        )
        out.append((trace, truth))
    return out


def inject_noise_feature(
    traces: Sequence[SessionTrace],
    name: str,
    seed: int = 0,
    group: FeatureGroup = FeatureGroup.IMMERSIVE,
) -> list[SessionTrace]:
    """Append an i.i.d. uniform[0, 1] continuous feature to every trace."""
    out = []
    new_schema = None
    for k, tr in enumerate(traces):
        if name in tr.schema:
            raise DuplicateFeature(f"feature {name!r} already present")
        if new_schema is None or new_schema.entries[:-1] != tr.schema.entries:
            new_schema = tr.schema.extended(
                FeatureSpec(name, group, FeatureKind.CONTINUOUS, frozenset({tr.environment}))
            )
        rng = np.random.default_rng(_seed_seq(seed, 7919, k))
        col = rng.random(len(tr))
        out.append(tr.replace(values=np.column_stack([tr.values, col]), schema=new_schema))
    return out


def confine_signal(traces: Sequence[SessionTrace], group: FeatureGroup, seed: int = 0) -> list[SessionTrace]:
    """Break the label link of every feature group except ``group``.

    Columns outside ``group`` are swapped wholesale between randomly paired
    traces (resampled to length), so their distribution stays realistic but
    carries no class information.
    """
    rng = np.random.default_rng(_seed_seq(seed, 104729))
    n = len(traces)
    perm = rng.permutation(n)
    out = []
    for i, tr in enumerate(traces):
        donor = traces[perm[i]]
        cols = [j for j, e in enumerate(tr.schema.entries) if e.group != group]
        idx = np.minimum((np.arange(len(tr)) * len(donor)) // len(tr), len(donor) - 1)
        vals = tr.values.copy()
        vals[:, cols] = donor.values[idx][:, cols]
        out.append(tr.replace(values=vals))
    return out


def with_overrides(cfg: ArchetypeConfig, **changes) -> ArchetypeConfig:
    return replace(cfg, **changes)
