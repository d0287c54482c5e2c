"""Log parsing and data-cleaning filters.

Log format (CSV with mandatory header, or JSONL with one frame object per
line)::

    participant_id,environment,trial_index,label_code,timestamp_s,<features...>

``label_code`` is -1 for open (unlabeled) trials.  Rows of one
(participant, trial) must appear in non-decreasing time order.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence, TextIO

import numpy as np

from provts.errors import (
    EmptyTrial,
    InvalidLabel,
    MalformedRow,
    NonMonotonicTime,
    ProvtsError,
    SchemaMismatch,
    UnknownFeature,
)
from provts.types import Environment, FeatureSchema, SessionTrace, Space, TaskLabel, schema_for

log = logging.getLogger(__name__)

META_COLUMNS = ("participant_id", "environment", "trial_index", "label_code", "timestamp_s")
DEFAULT_RATE = {Environment.IMMERSIVE: 30.0, Environment.DESKTOP: 10.0}
MIN_DURATION_S = 2.0


# -- parsing ----------------------------------------------------------------


def _open_text(stream: TextIO | str | Path) -> TextIO:
    if isinstance(stream, (str, Path)):
        return open(stream, newline="", encoding="utf-8")
    return stream


def _sniff_format(text: TextIO) -> tuple[str, TextIO]:
    head = text.read(1)
    while head and head.isspace():
        head = text.read(1)
    rest = text.read()
    buf = io.StringIO(head + rest)
    return ("jsonl" if head == "{" else "csv"), buf


def _rows_csv(text: TextIO, schema: FeatureSchema) -> Iterator[tuple[int, dict]]:
    reader = csv.reader(text)
    try:
        header = next(reader)
    except StopIteration:
        return
    expected = list(META_COLUMNS) + schema.names
    if header != expected:
        missing = [c for c in expected if c not in header]
        extra = [c for c in header if c not in expected]
        raise SchemaMismatch(
            f"header does not match {schema.environment.value} schema"
            + (f"; missing {missing}" if missing else "")
            + (f"; unexpected {extra}" if extra else "")
            + ("; column order differs" if not missing and not extra else "")
        )
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            yield line_no, {"__error__": f"expected {len(header)} fields, got {len(row)}"}
            continue
        yield line_no, dict(zip(header, row))


def _rows_jsonl(text: TextIO, schema: FeatureSchema) -> Iterator[tuple[int, dict]]:
    expected = set(META_COLUMNS) | set(schema.names)
    for line_no, line in enumerate(text, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            yield line_no, {"__error__": f"invalid JSON: {exc.msg}"}
            continue
        keys = set(obj)
        if keys != expected:
            missing = sorted(expected - keys)
            extra = sorted(keys - expected)
            raise SchemaMismatch(
                f"line {line_no}: fields do not match {schema.environment.value} schema"
                + (f"; missing {missing}" if missing else "")
                + (f"; unexpected {extra}" if extra else "")
            )
        yield line_no, obj


def parse_log(
    stream: TextIO | str | Path,
    environment: Environment | str,
    schema: FeatureSchema | None = None,
    *,
    fmt: str | None = None,
    on_error: str = "raise",
    issues: list[MalformedRow] | None = None,
) -> list[SessionTrace]:
    """Parse a CSV or JSONL behavior log into traces.

    Args:
        stream: open text stream or path.
        environment: environment the log was recorded in.
        schema: feature schema; defaults to ``schema_for(environment)``.
        fmt: "csv" or "jsonl"; sniffed from the first character when None.
        on_error: "raise" to stop at the first malformed row, "skip" to drop
            it and record a :class:`MalformedRow` in ``issues``.
        issues: optional list collecting skipped-row errors.

    Returns:
        Traces grouped by (participant, trial) in order of first appearance.

    Raises:
        SchemaMismatch: header or row keys differ from the schema.
        NonMonotonicTime: a timestamp regresses within a trial.
        EmptyTrial: a trial ends up with no valid rows.
        MalformedRow: unparsable row with ``on_error="raise"``.
    """
    env = Environment(environment)
    schema = schema or schema_for(env)
    text = _open_text(stream)
    try:
        if fmt is None:
            fmt, text_buf = _sniff_format(text)
        else:
            text_buf = text
        rows = _rows_jsonl(text_buf, schema) if fmt == "jsonl" else _rows_csv(text_buf, schema)
        groups: dict[tuple[str, int], dict] = {}
        for line_no, row in rows:
            try:
                parsed = _parse_row(row, env, schema, line_no)
            except MalformedRow as exc:
                if on_error == "raise":
                    raise
                log.warning("skipping malformed row: %s", exc)
                if issues is not None:
                    issues.append(exc)
                continue
            pid, trial, label, ts, values = parsed
            g = groups.setdefault((pid, trial), {"label": label, "ts": [], "values": [], "lines": []})
            if g["label"] != label:
                exc = MalformedRow(line_no, f"label changes within trial {(pid, trial)}")
                if on_error == "raise":
                    raise exc
                if issues is not None:
                    issues.append(exc)
                continue
            if g["ts"] and ts < g["ts"][-1]:
                raise NonMonotonicTime(
                    f"line {line_no}: timestamp {ts} < {g['ts'][-1]} in trial {(pid, trial)}"
                )
            g["ts"].append(ts)
            g["values"].append(values)
    finally:
        if isinstance(stream, (str, Path)):
            text.close()

    traces = []
    for (pid, trial), g in groups.items():
        if not g["ts"]:
            raise EmptyTrial(f"trial {(pid, trial)} has no frames")
        ts = np.array(g["ts"])
        traces.append(
            SessionTrace(
                pid,
                env,
                trial,
                g["label"],
                ts,
                np.array(g["values"]),
                schema,
                _rate_hint(ts, env),
            )
        )
    return traces


def _rate_hint(ts: np.ndarray, env: Environment) -> float:
    if ts.size > 1:
        dt = np.median(np.diff(ts))
        if dt > 0:
            return float(1.0 / dt)
    return DEFAULT_RATE[env]


def _parse_row(row: dict, env: Environment, schema: FeatureSchema, line_no: int):
    if "__error__" in row:
        raise MalformedRow(line_no, row["__error__"])
    try:
        row_env = Environment(str(row["environment"]).strip())
    except ValueError:
        raise MalformedRow(line_no, f"unknown environment {row['environment']!r}") from None
    if row_env is not env:
        raise SchemaMismatch(f"line {line_no}: row environment {row_env.value} != {env.value}")
    try:
        pid = str(row["participant_id"]).strip()
        trial = int(row["trial_index"])
        code = int(row["label_code"])
        ts = float(row["timestamp_s"])
        values = [float(row[name]) for name in schema.names]
    except (TypeError, ValueError) as exc:
        raise MalformedRow(line_no, f"unparsable value ({exc})") from None
    if not pid:
        raise MalformedRow(line_no, "empty participant_id")
    if not np.isfinite(ts) or not all(np.isfinite(values)):
        raise MalformedRow(line_no, "non-finite value")
    try:
        label = None if code == -1 else TaskLabel.from_code(code)
    except (InvalidLabel, ProvtsError) as exc:
        raise MalformedRow(line_no, str(exc)) from None
    return pid, trial, label, ts, values


def _fmt(x: float) -> str:
    # repr is the shortest round-tripping form, so files are deterministic
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def write_log(traces: Sequence[SessionTrace], dest: TextIO | str | Path, fmt: str = "csv") -> None:
    """Write traces in the ingest format (CSV or JSONL)."""
    if not traces:
        raise EmptyTrial("no traces to write")
    schema = traces[0].schema
    own = isinstance(dest, (str, Path))
    out = open(dest, "w", newline="", encoding="utf-8") if own else dest
    try:
        if fmt == "csv":
            w = csv.writer(out, lineterminator="\n")
            w.writerow(list(META_COLUMNS) + schema.names)
        for tr in traces:
            if tr.schema.names != schema.names:
                raise SchemaMismatch("traces with different schemas cannot share a log")
            code = tr.label.code if tr.label is not None else -1
            for ts, vals in zip(tr.timestamps, tr.values):
                if fmt == "csv":
                    w.writerow(
                        [tr.participant_id, tr.environment.value, tr.trial_index, code, _fmt(ts)]
                        + [_fmt(v) for v in vals]
                    )
                else:
                    obj = {
                        "participant_id": tr.participant_id,
                        "environment": tr.environment.value,
                        "trial_index": tr.trial_index,
                        "label_code": code,
                        "timestamp_s": float(ts),
                    }
                    obj.update({n: float(v) for n, v in zip(schema.names, vals)})
                    out.write(json.dumps(obj) + "\n")
    finally:
        if own:
            out.close()


# -- exclusion intervals ----------------------------------------------------


@dataclass(frozen=True)
class ExclusionInterval:
    participant_id: str
    trial_index: int
    t_start_s: float
    t_end_s: float


def read_exclusions(stream: TextIO | str | Path) -> list[ExclusionInterval]:
    text = _open_text(stream)
    try:
        reader = csv.DictReader(text)
        out = []
        for i, row in enumerate(reader, start=2):
            try:
                iv = ExclusionInterval(
                    row["participant_id"].strip(),
                    int(row["trial_index"]),
                    float(row["t_start_s"]),
                    float(row["t_end_s"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedRow(i, f"bad exclusion interval ({exc})") from None
            if iv.t_end_s < iv.t_start_s:
                raise MalformedRow(i, "exclusion interval ends before it starts")
            out.append(iv)
        return out
    finally:
        if isinstance(stream, (str, Path)):
            text.close()


def apply_exclusions(
    traces: Sequence[SessionTrace], intervals: Iterable[ExclusionInterval]
) -> tuple[list[SessionTrace], list[SessionTrace]]:
    """Drop frames inside manually recorded interruption spans (inclusive).

    Returns (traces with frames remaining, traces emptied entirely).
    """
    by_key: dict[tuple[str, int], list[ExclusionInterval]] = {}
    for iv in intervals:
        by_key.setdefault((iv.participant_id, iv.trial_index), []).append(iv)
    kept, emptied = [], []
    for tr in traces:
        ivs = by_key.get(tr.key)
        if not ivs:
            kept.append(tr)
            continue
        mask = np.ones(len(tr), dtype=bool)
        for iv in ivs:
            mask &= ~((tr.timestamps >= iv.t_start_s) & (tr.timestamps <= iv.t_end_s))
        if not mask.any():
            emptied.append(tr)
        elif mask.all():
            kept.append(tr)
        else:
            kept.append(tr.replace(timestamps=tr.timestamps[mask], values=tr.values[mask]))
    return kept, emptied


# -- filters ------------------------------------------------------------------


def filter_min_duration(
    traces: Sequence[SessionTrace], threshold_s: float = MIN_DURATION_S
) -> tuple[list[SessionTrace], list[SessionTrace]]:
    """Split traces by span ``last - first >= threshold_s`` (inclusive)."""
    if threshold_s <= 0:
        raise ValueError("threshold_s must be positive")
    kept, dropped = [], []
    for tr in traces:
        (kept if tr.duration >= threshold_s else dropped).append(tr)
    return kept, dropped


def exclude_interaction_tasks(traces: Sequence[SessionTrace]) -> list[SessionTrace]:
    return [t for t in traces if t.label is None or t.label.space is not Space.INTERACTION]


# -- golden rules -----------------------------------------------------------

AGGREGATES: dict[str, Callable[[np.ndarray], float]] = {
    "count": lambda col: float(np.count_nonzero(col)),
    "max": lambda col: float(col.max()),
    "min": lambda col: float(col.min()),
    "any": lambda col: float(np.any(col != 0)),
    "last": lambda col: float(col[-1]),
}

_COMPARE = {
    ">=": np.greater_equal,
    "≥": np.greater_equal,
    "<=": np.less_equal,
    "≤": np.less_equal,
    ">": np.greater,
    "<": np.less,
    "==": np.equal,
    "!=": np.not_equal,
}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"
    r"|(?P<op>>=|<=|==|!=|≥|≤|>|<)"
    r"|(?P<punct>[()])"
    r"|(?P<word>[A-Za-z_][A-Za-z0-9_.]*))"
)


class PredicateSyntaxError(ProvtsError):
    pass


def _tokenize(text: str) -> list[tuple[str, str]]:
    pos, out = 0, []
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise PredicateSyntaxError(f"unexpected character at {pos} in {text!r}")
        kind = m.lastgroup
        out.append((kind, m.group(kind)))
        pos = m.end()
    return out


class _Parser:
    # expr := and ('OR' and)* ; and := unary ('AND' unary)* ;
    # unary := 'NOT' unary | '(' expr ')' | agg '(' feature ')' op number

    def __init__(self, tokens, schema: FeatureSchema):
        self.toks = tokens
        self.i = 0
        self.schema = schema

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, kind=None, value=None):
        tok = self.peek()
        if tok[0] is None or (kind and tok[0] != kind) or (value and tok[1].upper() != value):
            raise PredicateSyntaxError(f"expected {value or kind}, got {tok[1]!r}")
        self.i += 1
        return tok[1]

    def is_word(self, w):
        k, v = self.peek()
        return k == "word" and v.upper() == w

    def parse(self):
        node = self.expr()
        if self.i != len(self.toks):
            raise PredicateSyntaxError(f"trailing tokens from {self.peek()[1]!r}")
        return node

    def expr(self):
        parts = [self.conj()]
        while self.is_word("OR"):
            self.take()
            parts.append(self.conj())
        return parts[0] if len(parts) == 1 else ("or", parts)

    def conj(self):
        parts = [self.unary()]
        while self.is_word("AND"):
            self.take()
            parts.append(self.unary())
        return parts[0] if len(parts) == 1 else ("and", parts)

    def unary(self):
        if self.is_word("NOT"):
            self.take()
            return ("not", self.unary())
        if self.peek() == ("punct", "("):
            self.take()
            node = self.expr()
            self.take("punct", ")")
            return node
        func = self.take("word").lower()
        if func not in AGGREGATES:
            raise PredicateSyntaxError(f"unknown aggregate {func!r}; use one of {sorted(AGGREGATES)}")
        self.take("punct", "(")
        feature = self.take("word")
        if feature not in self.schema:
            raise UnknownFeature(f"golden rule references unknown feature {feature!r}")
        self.take("punct", ")")
        op = self.take("op")
        value = float(self.take("num"))
        return ("cmp", func, self.schema.index(feature), op, value)


def _evaluate(node, values: np.ndarray) -> bool:
    tag = node[0]
    if tag == "and":
        return all(_evaluate(n, values) for n in node[1])
    if tag == "or":
        return any(_evaluate(n, values) for n in node[1])
    if tag == "not":
        return not _evaluate(node[1], values)
    _, func, col, op, value = node
    return bool(_COMPARE[op](AGGREGATES[func](values[:, col]), value))


@dataclass(frozen=True)
class GoldenRule:
    """A per-task expectation: traces labeled with a selected code must satisfy ``predicate``."""

    label_selector: frozenset[int]
    predicate: str

    def compile(self, schema: FeatureSchema):
        return _Parser(_tokenize(self.predicate), schema).parse()

    def applies_to(self, trace: SessionTrace) -> bool:
        return trace.label is not None and trace.label.code in self.label_selector

    def holds(self, trace: SessionTrace) -> bool:
        return _evaluate(self.compile(trace.schema), trace.values)


def load_golden_rules(source: str | Path | dict) -> list[GoldenRule]:
    """Read rules from a JSON mapping ``{"<code>": "<predicate>" | [predicates]}``."""
    doc = source if isinstance(source, dict) else json.loads(Path(source).read_text())
    rules = []
    for code, preds in doc.items():
        for p in [preds] if isinstance(preds, str) else preds:
            rules.append(GoldenRule(frozenset({int(code)}), p))
    return rules


def apply_golden_rules(
    traces: Sequence[SessionTrace], rules: Sequence[GoldenRule]
) -> tuple[list[SessionTrace], list[tuple[SessionTrace, GoldenRule]]]:
    """Keep traces that satisfy every rule selecting their label.

    Every predicate is compiled against the schema up front, so an
    unknown feature fails even when no trace is selected.
    """
    compiled: dict[tuple, list] = {}
    for tr in traces:
        names = tuple(tr.schema.names)
        if names not in compiled:
            compiled[names] = [(r, r.compile(tr.schema)) for r in rules]
    kept, dropped = [], []
    for tr in traces:
        failed = None
        for rule, node in compiled[tuple(tr.schema.names)]:
            if rule.applies_to(tr) and not _evaluate(node, tr.values):
                failed = rule
                break
        if failed is None:
            kept.append(tr)
        else:
            dropped.append((tr, failed))
    return kept, dropped


def check_rules(rules: Sequence[GoldenRule], schema: FeatureSchema) -> None:
    for r in rules:
        r.compile(schema)


# -- full cleaning pass -----------------------------------------------------


@dataclass
class CleanReport:
    total_in: int = 0
    dropped_short: int = 0
    dropped_golden: int = 0
    dropped_interaction: int = 0
    kept: int = 0
    reasons: dict[str, str] = field(default_factory=dict)
    malformed_rows: list[str] = field(default_factory=list)

    def reconciles(self) -> bool:
        return self.total_in == self.dropped_short + self.dropped_golden + self.dropped_interaction + self.kept

    def to_dict(self) -> dict:
        return {
            "total_in": self.total_in,
            "dropped_short": self.dropped_short,
            "dropped_golden": self.dropped_golden,
            "dropped_interaction": self.dropped_interaction,
            "kept": self.kept,
            "reasons": self.reasons,
            "malformed_rows": self.malformed_rows,
        }


def _key_str(tr: SessionTrace) -> str:
    return f"{tr.participant_id}/{tr.trial_index}"


def clean(
    traces: Sequence[SessionTrace],
    rules: Sequence[GoldenRule] = (),
    *,
    threshold_s: float = MIN_DURATION_S,
    exclusions: Iterable[ExclusionInterval] = (),
    drop_interaction: bool = True,
) -> tuple[list[SessionTrace], CleanReport]:
    """Exclusion spans, then duration, golden-rule and interaction filters."""
    report = CleanReport(total_in=len(traces))
    cur, emptied = apply_exclusions(traces, exclusions)
    for tr in emptied:
        report.dropped_short += 1
        report.reasons[_key_str(tr)] = "all frames inside exclusion intervals"
    cur, short = filter_min_duration(cur, threshold_s)
    for tr in short:
        report.dropped_short += 1
        report.reasons[_key_str(tr)] = f"duration {tr.duration:.3f}s < {threshold_s}s"
    cur, failed = apply_golden_rules(cur, rules)
    for tr, rule in failed:
        report.dropped_golden += 1
        report.reasons[_key_str(tr)] = f"golden rule failed: {rule.predicate}"
    if drop_interaction:
        kept = exclude_interaction_tasks(cur)
        kept_ids = {id(t) for t in kept}
        for tr in cur:
            if id(tr) not in kept_ids:
                report.dropped_interaction += 1
                report.reasons[_key_str(tr)] = "interaction-space task"
        cur = kept
    report.kept = len(cur)
    return cur, report
