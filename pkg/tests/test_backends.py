"""Backend laws: determinism, reuse statistics, length statistics, replay."""

import numpy as np
import pytest

from ecot_sched.backends import (
    BackendError,
    ReplayBackend,
    StepProfile,
    SyntheticBackend,
    SyntheticProfile,
    default_profile,
    stable_digest,
)
from ecot_sched.trace import ReasoningTrace, StepSpec


@pytest.fixture
def backend():
    return SyntheticBackend(default_profile(seed=42))


def test_encode_degenerate_input(backend):
    ctx = backend.encode("", b"")
    assert ctx.encoded == ()


def test_encode_deterministic(backend):
    a = backend.encode("lift the cup", b"\x01\x02")
    b = backend.encode("lift the cup", b"\x01\x02")
    assert a == b
    assert len(a.encoded) > 0


def test_encode_no_collisions_over_random_payloads():
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(10_000):
        payload = rng.bytes(24)
        seen.add(stable_digest("encode", "task", payload))
    assert len(seen) == 10_000


def test_one_byte_observation_difference_changes_digest():
    a = bytearray(b"observation-payload")
    b = bytearray(a)
    b[3] ^= 0x01
    assert stable_digest("x", bytes(a)) != stable_digest("x", bytes(b))


def test_begin_step_deterministic(backend, schema):
    ctx = backend.encode("pick", b"obs")
    spec = schema.steps[1]
    prev = (7, 8, 9)
    runs = [backend.begin_step(ctx, (1, 2), spec, prev).drain() for _ in range(3)]
    assert runs[0] == runs[1] == runs[2]


def test_step_generator_yields_one_token_per_call(backend, schema):
    ctx = backend.encode("pick", b"obs")
    gen = backend.begin_step(ctx, (), schema.steps[0], ())
    out = []
    while not gen.done:
        out.append(gen.next_token())
    assert tuple(out) == gen.tokens
    assert gen.next_token() is None


def test_forced_reuse(schema):
    profile = SyntheticProfile(steps={"task": StepProfile(10, 2, 0.0)}, seed=1)
    backend = SyntheticBackend(profile)
    ctx = backend.encode("i", b"o")
    prev = (4, 5, 6)
    assert backend.begin_step(ctx, (), schema.steps[0], prev).drain() == prev


def test_forced_regeneration_differs(schema):
    profile = SyntheticProfile(steps={"task": StepProfile(12, 0, 1.0)}, seed=1)
    backend = SyntheticBackend(profile)
    spec = schema.steps[0]
    prev = tuple(range(12))
    hits = 0
    for i in range(10_000):
        ctx = backend.encode("i", i.to_bytes(4, "little"))
        if backend.begin_step(ctx, (), spec, prev).drain() == prev:
            hits += 1
    assert hits == 0  # collision chance bounded by the 2^32 id space


def test_truncation_flag(schema):
    profile = SyntheticProfile(steps={"task": StepProfile(500, 0, 1.0)}, seed=1)
    backend = SyntheticBackend(profile)
    spec = schema.steps[0]
    gen = backend.begin_step(backend.encode("i", b"o"), (), spec, ())
    assert gen.truncated
    assert len(gen.drain()) == spec.max_tokens


def test_missing_profile_step_raises(schema):
    backend = SyntheticBackend(SyntheticProfile(steps={}, seed=0))
    with pytest.raises(BackendError):
        backend.begin_step(backend.encode("i", b"o"), (), schema.steps[0], ())


def test_reuse_frequency_converges(schema):
    p = 0.3
    profile = SyntheticProfile(steps={"plan": StepProfile(30, 3, p)}, seed=5)
    backend = SyntheticBackend(profile)
    spec = next(s for s in schema.steps if s.name == "plan")
    prev = tuple(range(30))
    m = 4000
    reused = 0
    for i in range(m):
        ctx = backend.encode("i", i.to_bytes(4, "little"))
        if backend.begin_step(ctx, (), spec, prev).drain() == prev:
            reused += 1
    se = (p * (1 - p) / m) ** 0.5
    assert abs(reused / m - (1 - p)) <= 3 * se


def test_sampled_lengths_converge(schema):
    mean = 40.0
    profile = SyntheticProfile(steps={"plan": StepProfile(mean, 5, 1.0)}, seed=5)
    backend = SyntheticBackend(profile)
    spec = next(s for s in schema.steps if s.name == "plan")
    m = 3000
    lengths = []
    for i in range(m):
        ctx = backend.encode("i", i.to_bytes(4, "little"))
        lengths.append(len(backend.begin_step(ctx, (), spec, ()).drain()))
    assert abs(np.mean(lengths) - mean) / mean <= 0.05


def test_context_invariant_profile_is_constant(schema):
    profile = SyntheticProfile(
        steps={"task": StepProfile(10, 2, 1.0)}, seed=3, vary_with_context=False)
    backend = SyntheticBackend(profile)
    spec = schema.steps[0]
    a = backend.begin_step(backend.encode("i", b"one"), (), spec, ()).drain()
    b = backend.begin_step(backend.encode("j", b"two"), (), spec, ()).drain()
    assert a == b


def test_replay_backend_reemits_episode(schema):
    rng = np.random.default_rng(2)
    episode = []
    for t in range(4):
        steps = tuple(
            (s.name, tuple(int(x) for x in rng.integers(0, 100, 5)))
            for s in schema.steps
        )
        episode.append(ReasoningTrace(t, steps))
    backend = ReplayBackend(episode)
    for t in range(4):
        ctx = backend.encode("i", t.to_bytes(2, "little"))
        for spec in schema.steps:
            out = backend.begin_step(ctx, (), spec, ()).drain()
            assert out == episode[t].tokens_of(spec.name)
    with pytest.raises(BackendError):
        backend.encode("i", b"past-the-end")


def test_replay_backend_unknown_step(schema):
    episode = [ReasoningTrace(0, (("task", (1,)),))]
    backend = ReplayBackend(episode)
    backend.encode("i", b"o")
    with pytest.raises(BackendError):
        backend.begin_step(None, (), StepSpec("ghost", "low", 4), ())
