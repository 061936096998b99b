"""Trace model: update-ratio metric, schema invariants, log round-trips."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecot_sched.backends import SyntheticBackend, default_profile
from ecot_sched.metrics import profile_episodes
from ecot_sched.schedulers import SchedulerConfig, run_episode
from ecot_sched.trace import (
    ActionVector,
    ReasoningTrace,
    SchemaError,
    SchemaMismatchError,
    StepSchema,
    StepSpec,
    TraceParseError,
    default_schema,
    deserialize_trace,
    parse_log_line,
    serialize_trace,
    trace_update_ratio,
    update_ratio,
)
from test_kernels import brute_levenshtein


def test_update_ratio_identical():
    assert update_ratio([1, 2, 3], [1, 2, 3]) == 0.0


def test_update_ratio_full_deletion():
    assert update_ratio([1, 2, 3, 4], []) == 1.0
    assert update_ratio([], []) == 0.0


def test_update_ratio_single_substitution():
    prev = list(range(1, 11))
    nxt = list(prev)
    nxt[4] = 99
    # brute-force oracle on sequences of length <= 12
    assert brute_levenshtein(prev, nxt) == 1
    assert update_ratio(prev, nxt) == pytest.approx(0.1)


seqs = st.lists(st.integers(min_value=0, max_value=6), max_size=10)


@given(seqs, seqs)
@settings(max_examples=200, deadline=None)
def test_update_ratio_symmetric_and_bounded(a, b):
    r = update_ratio(a, b)
    assert r == update_ratio(b, a)
    assert 0.0 <= r <= 1.0
    assert (r == 0.0) == (a == b)


@given(
    st.integers(min_value=1, max_value=8).flatmap(
        lambda n: st.tuples(*[
            st.lists(st.integers(min_value=0, max_value=4), min_size=n, max_size=n)
            for _ in range(3)
        ])
    )
)
@settings(max_examples=150, deadline=None)
def test_update_ratio_triangle_on_equal_lengths(xyz):
    x, y, z = xyz
    assert update_ratio(x, z) <= update_ratio(x, y) + update_ratio(y, z) + 1e-12


def test_update_ratio_disjoint_with_empty_side():
    assert update_ratio([5, 6, 7], []) == 1.0


# -- schema invariants -------------------------------------------------------


def test_schema_requires_unique_names():
    with pytest.raises(SchemaError):
        StepSchema((StepSpec("a", "high", 4), StepSpec("a", "low", 4)))


def test_schema_rejects_bad_level_and_budget():
    with pytest.raises(SchemaError):
        StepSpec("a", "mid", 4)
    with pytest.raises(SchemaError):
        StepSpec("a", "low", 0)


def test_default_schema_shape(schema):
    assert schema.num_reasoning == 6
    assert schema.action_step.name == "action"
    assert schema.high_level_names() == ("task", "plan", "subtask")
    assert schema.low_level_names() == ("move", "gripper", "visible_objects")


def test_action_vector_must_be_finite():
    with pytest.raises(ValueError):
        ActionVector((0.0, float("nan")))


# -- trace_update_ratio ------------------------------------------------------


def _trace(t, contents):
    return ReasoningTrace(t, tuple((n, tuple(c)) for n, c in contents))


def test_trace_update_ratio_identity(schema):
    a = _trace(0, [(n, [1, 2]) for n in schema.names])
    b = _trace(1, [(n, [1, 2]) for n in schema.names])
    assert all(v == 0.0 for v in trace_update_ratio(a, b).values())


def test_trace_update_ratio_excludes_action_and_flags_replacement(schema):
    a = _trace(0, [(n, [1, 2]) for n in schema.names])
    contents = [(n, [1, 2]) if n != "plan" else (n, [8, 9]) for n in schema.names]
    b = _trace(1, contents)
    ratios = trace_update_ratio(a, b)
    assert ratios["plan"] == 1.0
    assert all(v == 0.0 for k, v in ratios.items() if k != "plan")
    assert "action" not in ratios


def test_trace_update_ratio_schema_mismatch(schema):
    a = _trace(0, [(n, [1]) for n in schema.names])
    b = _trace(1, [(n, [1]) for n in reversed(schema.names)])
    with pytest.raises(SchemaMismatchError):
        trace_update_ratio(a, b)


def test_plan_ratio_converges_to_change_probability(schema):
    # The generator's plan change probability is 0.084; over >= 2000
    # transitions the measured mean ratio lands within +/- 0.01 of it.
    backend = SyntheticBackend(default_profile(seed=9))
    results, _ = run_episode(
        SchedulerConfig(mode="sequential"), 2501, backend, schema, seed=9)
    report = profile_episodes([[r.trace for r in results]])
    assert report.transitions >= 2000
    assert abs(report.per_step["plan"].ratio_mean - 0.084) <= 0.01


# -- serialization -----------------------------------------------------------


def random_trace(rng, schema, with_action=True):
    steps = []
    for spec in schema.steps:
        n = int(rng.integers(0, min(spec.max_tokens, 20) + 1))
        steps.append((spec.name, tuple(int(t) for t in rng.integers(0, 2**32, n))))
    action = None
    if with_action:
        action = ActionVector(tuple(float(x) for x in rng.uniform(-1, 1, schema.action_dim)))
    return ReasoningTrace(int(rng.integers(0, 1000)), tuple(steps), action)


@given(st.integers(min_value=0, max_value=2**31))
@settings(max_examples=80, deadline=None)
def test_serialize_round_trip_identity(seed):
    schema = default_schema()
    rng = np.random.default_rng(seed)
    trace = random_trace(rng, schema, with_action=bool(seed % 2))
    data = serialize_trace(trace, schema, wall_ms=float(rng.uniform(0, 5000)))
    assert deserialize_trace(data) == trace


def test_serialize_is_canonical(schema):
    # serialize(deserialize(serialize(x))) is byte-identical
    rng = np.random.default_rng(4)
    steps = tuple(
        (spec.name, tuple(int(t) for t in rng.integers(0, 2**32, spec.max_tokens)))
        for spec in schema.steps
    )
    trace = ReasoningTrace(3, steps, ActionVector((0.25,) * schema.action_dim))
    once = serialize_trace(trace, schema, wall_ms=12.5)
    again = serialize_trace(deserialize_trace(once), schema, wall_ms=12.5)
    assert once == again


def test_empty_steps_trace_round_trips(schema):
    trace = ReasoningTrace(0, tuple((n, ()) for n in schema.names))
    assert deserialize_trace(serialize_trace(trace, schema)) == trace


def test_field_order_is_fixed(schema):
    trace = ReasoningTrace(0, tuple((n, (1,)) for n in schema.names),
                           ActionVector((0.0,) * schema.action_dim))
    record = json.loads(serialize_trace(trace, schema, wall_ms=1.0))
    assert list(record) == ["timestep", "steps", "action", "wall_ms"]
    assert list(record["steps"][0]) == ["name", "level", "tokens"]


def test_parse_error_reports_byte_offset():
    with pytest.raises(TraceParseError) as exc:
        parse_log_line(b'{"timestep": 0, "steps": [', base_offset=100, line=7)
    assert exc.value.offset >= 100
    assert exc.value.line == 7


def test_parse_error_on_wrong_shape():
    with pytest.raises(TraceParseError):
        parse_log_line(b'{"timestep": 0}')
