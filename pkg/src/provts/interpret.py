"""Timeline annotation of unlabeled sessions with growing windows.

Cumulative prefixes ``[0, start_len)``, ``[0, start_len + step)``, ...,
``[0, T)`` are transformed like training traces and classified.  The label
of each prefix is credited to the frames it added over the previous
prefix, so the session ends up partitioned into consecutive spans.  Spans
below the confidence threshold become uncertain (code -1) and equal
neighbours are merged.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from provts.errors import InvalidConfig, SchemaMismatch, TraceTooShort
from provts.transform import TransformConfig, transform_trace
from provts.types import SessionTrace

UNCERTAIN = -1
DEFAULT_INDICATOR = "objPosition.y"


@dataclass(frozen=True)
class AnnotateConfig:
    start_len: int = 100
    step: int | None = None  # frames; None = one second at the trace's rate
    threshold: float = 0.5
    indicator_feature: str = DEFAULT_INDICATOR

    def __post_init__(self):
        if self.start_len < 1:
            raise InvalidConfig("start_len must be >= 1")
        if self.step is not None and self.step < 1:
            raise InvalidConfig("step must be >= 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise InvalidConfig("threshold must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def window_ends(T: int, start_len: int = 100, step: int = 30) -> list[int]:
    """End frames (exclusive) of the growing windows over a T-frame trace."""
    if step < 1:
        raise InvalidConfig("step must be >= 1")
    if T < start_len:
        raise TraceTooShort(f"trace has {T} frames, growing windows start at {start_len}")
    ends = list(range(start_len, T + 1, step))
    if ends[-1] != T:
        ends.append(T)
    return ends


def growing_windows(trace: SessionTrace, start_len: int = 100, step: int = 30) -> list[SessionTrace]:
    """Cumulative prefixes of ``trace``; see window_ends."""
    return [trace.slice(0, e) for e in window_ends(len(trace), start_len, step)]


def _default_step(trace: SessionTrace) -> int:
    rate = trace.sample_rate_hint
    if not rate or not np.isfinite(rate):
        dt = np.diff(trace.timestamps)
        rate = 1.0 / float(np.median(dt)) if dt.size else 30.0
    return max(1, int(round(rate)))


@dataclass(frozen=True)
class Segment:
    t_start_s: float
    t_end_s: float
    code: int
    confidence: float
    frame_start: int
    frame_end: int  # exclusive

    @property
    def frames(self) -> int:
        return self.frame_end - self.frame_start


def merge_segments(segments: Sequence[Segment]) -> list[Segment]:
    """Merge adjacent segments with equal codes.

    The merged confidence is the frame-weighted mean.  Idempotent.
    """
    out: list[Segment] = []
    for s in segments:
        if out and out[-1].code == s.code:
            a = out[-1]
            w = a.frames + s.frames
            conf = (a.confidence * a.frames + s.confidence * s.frames) / w if w else a.confidence
            out[-1] = Segment(a.t_start_s, s.t_end_s, a.code, float(conf), a.frame_start, s.frame_end)
        else:
            out.append(s)
    return out


@dataclass
class TimelineAnnotation:
    trace_id: str
    model_id: str
    segments: list[Segment]
    t_first: float
    t_last: float
    indicator_feature: str = DEFAULT_INDICATOR
    threshold: float = 0.5
    indicator_t: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    indicator_v: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def validate(self) -> None:
        """Raise ValueError unless segments are ordered, contiguous and cover the session."""
        segs = self.segments
        if not segs:
            raise ValueError("timeline has no segments")
        if segs[0].t_start_s != self.t_first or segs[-1].t_end_s != self.t_last:
            raise ValueError("timeline does not cover the whole session")
        for a, b in zip(segs, segs[1:]):
            if a.t_end_s != b.t_start_s or a.frame_end != b.frame_start:
                raise ValueError("timeline segments are not contiguous")
        for s in segs:
            if not s.t_start_s <= s.t_end_s or s.frame_end <= s.frame_start:
                raise ValueError("timeline segment has negative extent")
            if not 0.0 <= s.confidence <= 1.0:
                raise ValueError("confidence outside [0, 1]")

    def code_at(self, t: float) -> int:
        for s in self.segments:
            if t < s.t_end_s:
                return s.code
        return self.segments[-1].code

    def coverage(self, t0: float, t1: float) -> dict[int, float]:
        """Seconds of [t0, t1] annotated with each code."""
        out: dict[int, float] = {}
        for s in self.segments:
            overlap = min(t1, s.t_end_s) - max(t0, s.t_start_s)
            if overlap > 0:
                out[s.code] = out.get(s.code, 0.0) + overlap
        return out

    def dominant(self, t0: float, t1: float, include_uncertain: bool = False) -> int:
        """Code covering most of [t0, t1]; ties go to the smaller code.

        Uncertain spans are ignored unless ``include_uncertain``; if nothing
        else covers the interval the result is UNCERTAIN.
        """
        cov = self.coverage(t0, t1)
        if not include_uncertain:
            cov.pop(UNCERTAIN, None)
        if not cov:
            return UNCERTAIN
        return min(cov, key=lambda c: (-cov[c], c))

    def to_dict(self) -> dict:
        return {
            "trace_id": self.trace_id,
            "model_id": self.model_id,
            "indicator_feature": self.indicator_feature,
            "threshold": self.threshold,
            "t_first": self.t_first,
            "t_last": self.t_last,
            "segments": [asdict(s) for s in self.segments],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_start_s", "t_end_s", "code", "confidence", "frame_start", "frame_end"])
        for s in self.segments:
            w.writerow([repr(s.t_start_s), repr(s.t_end_s), s.code, repr(s.confidence), s.frame_start, s.frame_end])
        return buf.getvalue()

    def to_svg(self, width: int = 900, height: int = 160) -> str:
        """Colored category bands with the indicator feature as a black polyline."""
        pad_l, pad_r, pad_t, legend_h = 40, 10, 10, 28
        plot_h = height - pad_t - legend_h
        span = (self.t_last - self.t_first) or 1.0
        x_of = lambda t: pad_l + (t - self.t_first) / span * (width - pad_l - pad_r)  # noqa: E731
        codes = sorted({s.code for s in self.segments})
        colors = {c: _color(c) for c in codes}
        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">',
            f"<title>{escape(self.trace_id)} / {escape(self.model_id)}</title>",
        ]
        for s in self.segments:
            x0, x1 = x_of(s.t_start_s), x_of(s.t_end_s)
            parts.append(
                f'<rect x="{x0:.2f}" y="{pad_t}" width="{max(x1 - x0, 0.0):.2f}" height="{plot_h}" '
                f'fill="{colors[s.code]}"><title>{s.code} ({s.confidence:.2f})</title></rect>'
            )
        if self.indicator_v.size:
            v = self.indicator_v
            lo, hi = float(v.min()), float(v.max())
            rng = (hi - lo) or 1.0
            pts = " ".join(
                f"{x_of(t):.2f},{pad_t + plot_h - (y - lo) / rng * plot_h:.2f}"
                for t, y in zip(self.indicator_t, v)
            )
            parts.append(f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="1"/>')
            parts.append(
                f'<text x="2" y="{pad_t + 10}">{escape(self.indicator_feature)}</text>'
            )
        parts.append(
            f'<line x1="{pad_l}" y1="{pad_t + plot_h}" x2="{width - pad_r}" y2="{pad_t + plot_h}" stroke="black"/>'
        )
        x = pad_l
        for c in codes:
            label = "uncertain" if c == UNCERTAIN else str(c)
            parts.append(f'<rect x="{x}" y="{height - 18}" width="10" height="10" fill="{colors[c]}"/>')
            parts.append(f'<text x="{x + 13}" y="{height - 9}">{label}</text>')
            x += 20 + 7 * len(label)
        parts.append("</svg>")
        return "\n".join(parts) + "\n"

    def save(self, directory: str | Path, stem: str | None = None) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        stem = stem or f"timeline_{self.trace_id}"
        out = [d / f"{stem}.json", d / f"{stem}.csv", d / f"{stem}.svg"]
        out[0].write_text(self.to_json())
        out[1].write_text(self.to_csv())
        out[2].write_text(self.to_svg())
        return out


_PALETTE = ("#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948", "#b07aa1", "#ff9da7", "#9c755f")


def _color(code: int) -> str:
    if code == UNCERTAIN:
        return "#d0d0d0"
    # one hue family per visual space, shade by task type
    base = _PALETTE[(code // 10) % len(_PALETTE)]
    r, g, b = (int(base[i : i + 2], 16) for i in (1, 3, 5))
    f = 0.55 + 0.45 * ((code % 10) / 9.0)
    return "#{:02x}{:02x}{:02x}".format(*(min(255, int(c * f + 255 * (1 - f) * 0.3)) for c in (r, g, b)))


def spans_from_windows(
    timestamps: np.ndarray,
    ends: Sequence[int],
    codes: Sequence[int],
    confidences: Sequence[float],
    threshold: float = 0.5,
) -> list[Segment]:
    """Credit each window's prediction to the frames it added; merge equal neighbours."""
    T = timestamps.size
    spans = []
    prev = 0
    for e, c, p in zip(ends, codes, confidences):
        p = float(np.clip(p, 0.0, 1.0))
        code = int(c) if p >= threshold else UNCERTAIN
        t0 = float(timestamps[prev])
        t1 = float(timestamps[e]) if e < T else float(timestamps[-1])
        spans.append(Segment(t0, t1, code, p, prev, e))
        prev = e
    return merge_segments(spans)


def annotate(
    trace: SessionTrace,
    model,
    config: AnnotateConfig = AnnotateConfig(),
    model_id: str | None = None,
) -> TimelineAnnotation:
    """Annotate ``trace`` with a trained model (see provts.models.TrainedModel)."""
    if trace.schema.hash != model.raw_schema.hash:
        raise SchemaMismatch(
            f"trace schema hash {trace.schema.hash} != model schema hash {model.raw_schema.hash}"
        )
    step = config.step or _default_step(trace)
    ends = window_ends(len(trace), config.start_len, step)
    tcfg = TransformConfig(l=model.series_length, statistics=tuple(model.statistics))
    windows = np.stack([transform_trace(trace.slice(0, e), tcfg) for e in ends])
    codes, conf = model.predict_with_confidence(windows)
    segments = spans_from_windows(trace.timestamps, ends, codes, conf, config.threshold)
    ind_t, ind_v = np.zeros(0), np.zeros(0)
    if config.indicator_feature in trace.schema:
        ind_t, ind_v = trace.timestamps, trace.column(config.indicator_feature)
    return TimelineAnnotation(
        trace.participant_id,
        model_id or f"{model.kind}-{model.scale}",
        segments,
        float(trace.timestamps[0]),
        float(trace.timestamps[-1]),
        config.indicator_feature,
        config.threshold,
        ind_t,
        ind_v,
    )

