from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from provts.synth import generate, preset
from provts.transform import build_dataset
from provts.types import Environment, FeatureKind, SessionTrace, TaskLabel, schema_for

settings.register_profile(
    "provts", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("provts")


def make_trace(
    T: int = 60,
    code: int | None = 2,
    *,
    pid: str = "p0",
    trial: int = 0,
    env: str = "immersive",
    rate: float = 30.0,
    seed: int = 0,
    values: np.ndarray | None = None,
) -> SessionTrace:
    """A schema-valid trace with random continuous columns and sparse events."""
    schema = schema_for(env)
    rng = np.random.default_rng(seed)
    if values is None:
        values = np.zeros((T, schema.dim))
        for i, e in enumerate(schema.entries):
            if e.kind is FeatureKind.BINARY_EVENT:
                values[:, i] = rng.random(T) < 0.05
            else:
                values[:, i] = rng.normal(size=T)
        for prefix in ("forward", "up"):
            if f"{prefix}.x" in schema:
                idx = [schema.index(f"{prefix}.{a}") for a in "xyz"]
                v = rng.normal(size=(T, 3))
                values[:, idx] = v / np.linalg.norm(v, axis=1, keepdims=True)
    return SessionTrace(
        pid,
        Environment(env),
        trial,
        None if code is None else TaskLabel.from_code(code),
        np.arange(T) / rate,
        values,
        schema,
        rate,
    )


@pytest.fixture
def trace_factory():
    return make_trace


@pytest.fixture(scope="session")
def spaces3_traces():
    return generate(preset("spaces3"), 30, 7, Environment.IMMERSIVE)


@pytest.fixture(scope="session")
def spaces3(spaces3_traces):
    return build_dataset(spaces3_traces)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
