"""Inference strategy schedulers over a simulated engine clock.

Five modes are implemented:

- sequential: every step generated in order, batch of one.
- parallel_sync: all steps issued concurrently against the previous trace,
  continuous-batched, blocking on the slowest request.
- parallel_async: the control loop waits only for the action request;
  reasoning requests run on across timesteps and land in a shared cache.
- k_step: low-level steps and the action regenerate every timestep, the
  high-level tier only every k timesteps.
- two_track: a background track refreshes high-level steps continuously
  while the foreground track serializes low-level steps plus the action.

The simulated clock advances one engine iteration at a time and only while
the engine is processing a timestep, so background work progresses exactly
as far per timestep as the foreground schedule runs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .backends import BackendError, GenerationBackend
from .batching import (
    ACTION,
    REASONING,
    GenerationRequest,
    LatencyModel,
    continuous_batch,
    schedule_cost,
)
from .trace import ActionVector, Context, ReasoningTrace, StepSchema, StepSpec, TokenSeq

MODES = ("sequential", "parallel_sync", "parallel_async", "k_step", "two_track")

REUSE_STALE = "reuse_stale"
ABORT_EPISODE = "abort_episode"

_ACTION_UNIT = 65536  # token ids map to [-1, 1) action units modulo this


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class EpisodeAborted(RuntimeError):
    """Raised under the abort_episode policy; carries whatever completed."""

    def __init__(self, message: str, partial_trace: ReasoningTrace | None = None,
                 partial_results: list | None = None):
        super().__init__(message)
        self.partial_trace = partial_trace
        self.partial_results = partial_results or []


@dataclass(frozen=True)
class SchedulerConfig:
    mode: str = "sequential"
    k: int = 5
    slots: int = 8
    latency: LatencyModel = field(default_factory=LatencyModel)
    failure_policy: str = REUSE_STALE
    # Report measured wall time instead of the simulated clock; used when
    # fronting a live remote backend.
    wall_clock: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {self.mode!r}")
        if self.k < 1:
            raise ConfigError("k", "must be >= 1")
        if self.slots < 1:
            raise ConfigError("slots", "must be >= 1")
        if self.failure_policy not in (REUSE_STALE, ABORT_EPISODE):
            raise ConfigError("failure_policy", f"unknown policy {self.failure_policy!r}")
        if self.mode == "two_track" and self.slots < 2:
            raise ConfigError("slots", "two_track needs at least 2 slots")


@dataclass(frozen=True)
class StepResult:
    trace: ReasoningTrace
    action: ActionVector
    latency_ms: float
    staleness: dict[str, int]
    generated_tokens: int = 0
    failures: tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# Shared reasoning cache
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CacheSnapshot:
    """An atomic view of the cache: all step contents as they stood at one
    version, never mixing writes from different versions."""

    version: int
    steps: tuple[tuple[str, TokenSeq, int], ...]  # name, tokens, last_updated

    def tokens_of(self, name: str) -> TokenSeq:
        for n, toks, _ in self.steps:
            if n == name:
                return toks
        raise KeyError(name)

    def last_updated(self, name: str) -> int:
        for n, _, upd in self.steps:
            if n == name:
                return upd
        raise KeyError(name)

    def prefix_before(self, index: int) -> TokenSeq:
        out: list[int] = []
        for _, toks, _ in self.steps[:index]:
            out.extend(toks)
        return tuple(out)

    def staleness(self, now: int, names: Sequence[str]) -> dict[str, int]:
        return {n: now - max(self.last_updated(n), 0) for n in names}


def snapshot_fingerprint(steps: Sequence[tuple[str, TokenSeq, int]]) -> str:
    h = hashlib.blake2b(digest_size=16)
    for name, tokens, updated in steps:
        h.update(name.encode())
        h.update(np.asarray(tokens, dtype=np.int64).tobytes())
        h.update(updated.to_bytes(8, "little", signed=True))
        h.update(b"\x1e")
    return h.hexdigest()


class CachedTrace:
    """Shared, versioned step cache with an exclusive-access contract:
    writes are mutually exclusive and step-atomic, reads take whole-cache
    snapshots. The version counter bumps on every step write."""

    def __init__(self, names: Sequence[str],
                 recorder: Callable[[int, str], None] | None = None):
        self._names = tuple(names)
        self._steps: dict[str, tuple[TokenSeq, int]] = {n: ((), -1) for n in self._names}
        self._version = 0
        self._lock = threading.Lock()
        # Invoked under the lock with (version, fingerprint) after each
        # write; lets audits record every atomic state.
        self.recorder = recorder

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    def write(self, name: str, tokens: TokenSeq, timestep: int) -> int:
        if name not in self._steps:
            raise KeyError(name)
        with self._lock:
            prev_updated = self._steps[name][1]
            if timestep < prev_updated:
                raise ValueError(
                    f"write for step {name!r} moves last_updated backwards "
                    f"({prev_updated} -> {timestep})"
                )
            self._steps[name] = (tuple(tokens), timestep)
            self._version += 1
            if self.recorder is not None:
                self.recorder(self._version, snapshot_fingerprint(self._entries()))
            return self._version

    def _entries(self) -> tuple[tuple[str, TokenSeq, int], ...]:
        return tuple((n, *self._steps[n]) for n in self._names)

    def snapshot(self) -> CacheSnapshot:
        with self._lock:
            return CacheSnapshot(self._version, self._entries())

    def seed_from_trace(self, trace: ReasoningTrace, timestep: int) -> None:
        for name, tokens in trace.steps:
            self.write(name, tokens, timestep)


# ---------------------------------------------------------------------------
# Generation plumbing shared by the runners
# ---------------------------------------------------------------------------


def decode_action(tokens: TokenSeq, dim: int) -> ActionVector:
    comps = []
    for j in range(dim):
        if j < len(tokens):
            comps.append((tokens[j] % _ACTION_UNIT) / _ACTION_UNIT * 2.0 - 1.0)
        else:
            comps.append(0.0)
    return ActionVector(tuple(comps))


@dataclass
class _Generated:
    step: StepSpec
    tokens: TokenSeq
    truncated: bool = False
    failed: bool = False
    charged: bool = True  # failed substitutions cost no engine iterations


def _generate_step(
    backend: GenerationBackend,
    ctx: Context,
    prefix: TokenSeq,
    step: StepSpec,
    prev_content: TokenSeq,
) -> _Generated:
    gen = backend.begin_step(ctx, prefix, step, prev_content)
    return _Generated(step, gen.drain(), truncated=gen.truncated)


def _serial_cost(total_tokens: int, model: LatencyModel) -> float:
    return total_tokens * (model.c_iter + model.c_slot) + model.c_encode + model.c_decode


def _make_trace(timestep: int, generated: Sequence[_Generated],
                action_dim: int) -> tuple[ReasoningTrace, ActionVector]:
    steps = tuple((g.step.name, g.tokens) for g in generated)
    action = decode_action(generated[-1].tokens, action_dim)
    return ReasoningTrace(timestep, steps, action), action


# ---------------------------------------------------------------------------
# Micro engine: iteration-stepped continuous batcher with persistent state
# ---------------------------------------------------------------------------


@dataclass
class _EngineRequest:
    name: str
    tokens: TokenSeq
    remaining: int
    issue_timestep: int
    priority: str
    seqno: int
    on_complete: Callable[["_EngineRequest", int], None] | None = None


class _MicroEngine:
    """One-iteration-at-a-time continuous batcher. A slot freed by a
    completion at iteration k admits the next queued request at k+1."""

    def __init__(self, slots: int):
        self.slots: list[Optional[_EngineRequest]] = [None] * slots
        self.waiting: list[_EngineRequest] = []
        self._seq = 0

    def submit(self, req: _EngineRequest) -> None:
        req.seqno = self._seq
        self._seq += 1
        self.waiting.append(req)

    def in_flight_names(self) -> set[str]:
        names = {r.name for r in self.waiting}
        names.update(r.name for r in self.slots if r is not None)
        return names

    def idle(self) -> bool:
        return not self.waiting and all(r is None for r in self.slots)

    def tick(self, timestep: int) -> tuple[int, list[_EngineRequest]]:
        """Advance one iteration; returns (occupied slots, completions)."""
        if self.waiting:
            self.waiting.sort(key=lambda r: (0 if r.priority == ACTION else 1, r.seqno))
            for s in range(len(self.slots)):
                if not self.waiting:
                    break
                if self.slots[s] is None:
                    self.slots[s] = self.waiting.pop(0)
        occupied = 0
        completed: list[_EngineRequest] = []
        for s, req in enumerate(self.slots):
            if req is None:
                continue
            occupied += 1
            req.remaining -= 1
            if req.remaining == 0:
                completed.append(req)
                self.slots[s] = None
        for req in completed:
            if req.on_complete is not None:
                req.on_complete(req, timestep)
        return occupied, completed


# ---------------------------------------------------------------------------
# Mode runners
# ---------------------------------------------------------------------------


class _BaseRunner:
    mode: str

    def __init__(self, backend: GenerationBackend, schema: StepSchema,
                 config: SchedulerConfig):
        self.backend = backend
        self.schema = schema
        self.config = config
        self.cache = CachedTrace(schema.names)

    def step(self, ctx: Context, timestep: int) -> StepResult:
        t0 = time.perf_counter()
        result = self._step_impl(ctx, timestep)
        if self.config.wall_clock:
            result = dataclasses.replace(
                result, latency_ms=(time.perf_counter() - t0) * 1000.0)
        return result

    def _step_impl(self, ctx: Context, timestep: int) -> StepResult:
        raise NotImplementedError

    # Sequential generation chain shared by warm-up and the blocking modes.
    def _sequential_pass(
        self, ctx: Context, timestep: int, prev_contents: dict[str, TokenSeq]
    ) -> tuple[list[_Generated], float]:
        generated: list[_Generated] = []
        prefix: list[int] = []
        for spec in self.schema.steps:
            try:
                g = _generate_step(
                    self.backend, ctx, tuple(prefix), spec,
                    prev_contents.get(spec.name, ()),
                )
            except BackendError as exc:
                partial = ReasoningTrace(
                    timestep, tuple((x.step.name, x.tokens) for x in generated))
                raise EpisodeAborted(
                    f"step {spec.name!r} failed at t={timestep}: {exc}",
                    partial_trace=partial,
                ) from exc
            generated.append(g)
            prefix.extend(g.tokens)
        total = sum(len(g.tokens) for g in generated)
        latency = _serial_cost(total, self.config.latency)
        return generated, latency

    def _warmup(self, ctx: Context, timestep: int) -> StepResult:
        generated, latency = self._sequential_pass(ctx, timestep, {})
        for g in generated:
            self.cache.write(g.step.name, g.tokens, timestep)
        trace, action = _make_trace(timestep, generated, self.schema.action_dim)
        staleness = {s.name: 0 for s in self.schema.steps}
        return StepResult(trace, action, latency, staleness,
                          generated_tokens=trace.total_tokens())


class SequentialRunner(_BaseRunner):
    """Every step conditioned on all prior steps of the same timestep."""

    mode = "sequential"

    def __init__(self, backend, schema, config):
        super().__init__(backend, schema, config)
        self._prev: dict[str, TokenSeq] = {}

    def _step_impl(self, ctx: Context, timestep: int) -> StepResult:
        generated, latency = self._sequential_pass(ctx, timestep, self._prev)
        self._prev = {g.step.name: g.tokens for g in generated}
        for g in generated:
            self.cache.write(g.step.name, g.tokens, timestep)
        trace, action = _make_trace(timestep, generated, self.schema.action_dim)
        staleness = {s.name: 0 for s in self.schema.steps}
        return StepResult(trace, action, latency, staleness,
                          generated_tokens=trace.total_tokens())


class ParallelSyncRunner(_BaseRunner):
    """All steps issued concurrently against the previous trace, blocking
    at the synchronize barrier until every request completes."""

    mode = "parallel_sync"

    def __init__(self, backend, schema, config):
        super().__init__(backend, schema, config)
        self._prev_trace: ReasoningTrace | None = None

    def _step_impl(self, ctx: Context, timestep: int) -> StepResult:
        if self._prev_trace is None:
            result = self._warmup(ctx, timestep)
            self._prev_trace = result.trace
            return result
        prev = self._prev_trace
        jobs: list[tuple[StepSpec, TokenSeq, TokenSeq]] = []
        for i, spec in enumerate(self.schema.steps):
            prefix: list[int] = []
            for name, toks in prev.steps[:i]:
                prefix.extend(toks)
            jobs.append((spec, tuple(prefix), prev.steps[i][1]))

        # Wall-clock mode fans the requests out over worker threads; the
        # outcomes are still consumed in step order, which fixes the event
        # order the accounting sees.
        def _run(job):
            spec, prefix, prev_content = job
            try:
                return _generate_step(self.backend, ctx, prefix, spec, prev_content)
            except BackendError as exc:
                return exc

        if self.config.wall_clock:
            with ThreadPoolExecutor(max_workers=self.config.slots) as pool:
                outcomes = list(pool.map(_run, jobs))  # synchronize barrier
        else:
            outcomes = [_run(job) for job in jobs]

        generated: list[_Generated] = []
        failures: list[str] = []
        for (spec, _, prev_content), outcome in zip(jobs, outcomes):
            if isinstance(outcome, BackendError):
                if self.config.failure_policy == ABORT_EPISODE:
                    raise EpisodeAborted(
                        f"step {spec.name!r} failed at t={timestep}: {outcome}"
                    ) from outcome
                generated.append(_Generated(spec, prev_content, failed=True,
                                            charged=False))
                failures.append(spec.name)
                continue
            generated.append(outcome)
        requests = []
        for i, g in enumerate(generated):
            if not g.charged or not g.tokens:
                continue
            requests.append(GenerationRequest(
                id=i,
                step_index=i,
                prefix_len=sum(len(t) for _, t in prev.steps[:i]),
                target_len=len(g.tokens),
                priority=ACTION if g.step is self.schema.action_step else REASONING,
            ))
        schedule = continuous_batch(requests, self.config.slots)
        model = self.config.latency
        latency = schedule_cost(schedule, model) + model.c_encode + model.c_decode
        for g in generated:
            self.cache.write(g.step.name, g.tokens, timestep)
        trace, action = _make_trace(timestep, generated, self.schema.action_dim)
        self._prev_trace = trace
        staleness = {s.name: 0 for s in self.schema.steps}
        return StepResult(trace, action, latency, staleness,
                          generated_tokens=schedule.busy_slot_iterations,
                          failures=tuple(failures))


class ParallelAsyncRunner(_BaseRunner):
    """Returns as soon as the action request completes; reasoning requests
    keep running across timesteps and write into the cache when done."""

    mode = "parallel_async"

    def __init__(self, backend, schema, config):
        super().__init__(backend, schema, config)
        self.engine = _MicroEngine(config.slots)
        self._warm = False
        self._prev_action: TokenSeq = ()

    def _issue_reasoning(self, ctx: Context, timestep: int, snap: CacheSnapshot,
                         failures: list[str]) -> None:
        in_flight = self.engine.in_flight_names()
        for i, spec in enumerate(self.schema.reasoning_steps):
            if spec.name in in_flight:
                continue
            prefix = snap.prefix_before(i)
            prev_content = snap.tokens_of(spec.name)
            try:
                g = _generate_step(self.backend, ctx, prefix, spec, prev_content)
            except BackendError:
                failures.append(spec.name)  # step keeps its stale value
                continue

            def _land(req: _EngineRequest, t: int) -> None:
                self.cache.write(req.name, req.tokens, t)

            self.engine.submit(_EngineRequest(
                name=spec.name, tokens=g.tokens, remaining=len(g.tokens),
                issue_timestep=timestep, priority=REASONING, seqno=0,
                on_complete=_land,
            ))

    def _step_impl(self, ctx: Context, timestep: int) -> StepResult:
        if not self._warm:
            result = self._warmup(ctx, timestep)
            self._warm = True
            self._prev_action = result.trace.steps[-1][1]
            return result
        model = self.config.latency
        failures: list[str] = []
        snap = self.cache.snapshot()
        action_spec = self.schema.action_step
        try:
            g_action = _generate_step(
                self.backend, ctx,
                snap.prefix_before(self.schema.num_reasoning),
                action_spec, self._prev_action,
            )
        except BackendError as exc:
            if self.config.failure_policy == ABORT_EPISODE:
                raise EpisodeAborted(
                    f"action request failed at t={timestep}: {exc}"
                ) from exc
            g_action = _Generated(action_spec, self._prev_action,
                                  failed=True, charged=False)
            failures.append(action_spec.name)
        self._issue_reasoning(ctx, timestep, snap, failures)

        action_done = [g_action.charged is False]  # substituted action: no wait

        if g_action.charged:
            def _finish(req: _EngineRequest, t: int) -> None:
                action_done[0] = True
            self.engine.submit(_EngineRequest(
                name=action_spec.name, tokens=g_action.tokens,
                remaining=len(g_action.tokens), issue_timestep=timestep,
                priority=ACTION, seqno=0, on_complete=_finish,
            ))

        cost = 0.0
        tokens_processed = 0
        while not action_done[0]:
            occupied, _ = self.engine.tick(timestep)
            cost += model.c_iter + model.c_slot * occupied
            tokens_processed += occupied
        latency = cost + model.c_encode + model.c_decode

        final = self.cache.snapshot()
        steps = tuple(
            (spec.name, final.tokens_of(spec.name))
            for spec in self.schema.reasoning_steps
        ) + ((action_spec.name, g_action.tokens),)
        action = decode_action(g_action.tokens, self.schema.action_dim)
        trace = ReasoningTrace(timestep, steps, action)
        self.cache.write(action_spec.name, g_action.tokens, timestep)
        self._prev_action = g_action.tokens
        staleness = final.staleness(timestep, [s.name for s in self.schema.reasoning_steps])
        staleness[action_spec.name] = 0
        return StepResult(trace, action, latency, staleness,
                          generated_tokens=tokens_processed,
                          failures=tuple(failures))


class KStepRunner(_BaseRunner):
    """High-level steps refresh every k timesteps; low-level steps and the
    action regenerate sequentially every timestep on the cached prefix."""

    mode = "k_step"

    def _step_impl(self, ctx: Context, timestep: int) -> StepResult:
        model = self.config.latency
        refresh_high = timestep % self.config.k == 0
        snap = self.cache.snapshot()
        generated: list[_Generated] = []
        failures: list[str] = []
        contents: dict[str, TokenSeq] = {}
        prefix: list[int] = []
        charged_tokens = 0
        for i, spec in enumerate(self.schema.steps):
            is_action = spec is self.schema.action_step
            regenerate = is_action or spec.level == "low" or refresh_high
            if not regenerate:
                contents[spec.name] = snap.tokens_of(spec.name)
                prefix.extend(contents[spec.name])
                continue
            prev_content = snap.tokens_of(spec.name)
            try:
                g = _generate_step(self.backend, ctx, tuple(prefix), spec, prev_content)
            except BackendError as exc:
                if self.config.failure_policy == ABORT_EPISODE:
                    raise EpisodeAborted(
                        f"step {spec.name!r} failed at t={timestep}: {exc}"
                    ) from exc
                g = _Generated(spec, prev_content, failed=True, charged=False)
                failures.append(spec.name)
            generated.append(g)
            contents[spec.name] = g.tokens
            prefix.extend(g.tokens)
            if g.charged:
                charged_tokens += len(g.tokens)
                self.cache.write(spec.name, g.tokens, timestep)
        latency = _serial_cost(charged_tokens, model)
        steps = tuple((s.name, contents[s.name]) for s in self.schema.steps)
        action = decode_action(contents[self.schema.action_step.name],
                               self.schema.action_dim)
        trace = ReasoningTrace(timestep, steps, action)
        final = self.cache.snapshot()
        staleness = final.staleness(timestep, [s.name for s in self.schema.steps])
        return StepResult(trace, action, latency, staleness,
                          generated_tokens=charged_tokens,
                          failures=tuple(failures))


class TwoTrackRunner(_BaseRunner):
    """Track A cycles through high-level steps in the background; track B
    serializes low-level steps plus the action each timestep. Latency
    counts track B only; both tracks share the engine's slot clock."""

    mode = "two_track"

    def __init__(self, backend, schema, config, high_track: bool = True):
        super().__init__(backend, schema, config)
        self.high_track = high_track and bool(schema.high_level_names())
        self.engine = _MicroEngine(config.slots)
        self._warm = False
        self._high_cycle = 0
        # Track B owns its steps' history; only track A writes the cache.
        self._prev_b: dict[str, TokenSeq] = {}

    def _issue_high(self, ctx: Context, timestep: int, failures: list[str]) -> None:
        high = self.schema.high_level_names()
        name = high[self._high_cycle % len(high)]
        self._high_cycle += 1
        idx = self.schema.index_of(name)
        snap = self.cache.snapshot()
        spec = self.schema.steps[idx]
        try:
            g = _generate_step(self.backend, ctx, snap.prefix_before(idx), spec,
                               snap.tokens_of(name))
        except BackendError:
            failures.append(name)
            return

        def _land(req: _EngineRequest, t: int) -> None:
            self.cache.write(req.name, req.tokens, t)

        self.engine.submit(_EngineRequest(
            name=name, tokens=g.tokens, remaining=len(g.tokens),
            issue_timestep=timestep, priority=REASONING, seqno=0,
            on_complete=_land,
        ))

    def _step_impl(self, ctx: Context, timestep: int) -> StepResult:
        if not self._warm:
            result = self._warmup(ctx, timestep)
            self._warm = True
            self._prev_b = {
                name: tokens for name, tokens in result.trace.steps
                if self.schema.level_of(name) == "low"
                or name == self.schema.action_step.name
            }
            return result
        model = self.config.latency
        failures: list[str] = []
        snap = self.cache.snapshot()

        # Track B: low-level chain plus action, conditioned on the cached
        # high-level prefix followed by this timestep's own outputs.
        track_b: list[_Generated] = []
        prefix: list[int] = []
        for spec in self.schema.steps:
            if spec is not self.schema.action_step and spec.level == "high":
                prefix.extend(snap.tokens_of(spec.name))
                continue
            prev_content = self._prev_b.get(spec.name, ())
            try:
                g = _generate_step(self.backend, ctx, tuple(prefix), spec, prev_content)
            except BackendError as exc:
                if self.config.failure_policy == ABORT_EPISODE:
                    raise EpisodeAborted(
                        f"step {spec.name!r} failed at t={timestep}: {exc}"
                    ) from exc
                g = _Generated(spec, prev_content, failed=True, charged=False)
                failures.append(spec.name)
            track_b.append(g)
            prefix.extend(g.tokens)

        b_queue = [g for g in track_b if g.charged and g.tokens]
        b_remaining = sum(len(g.tokens) for g in b_queue)
        cost = 0.0
        tokens_processed = 0
        b_slot_busy_until = 0  # tokens left for the current track B step
        bi = 0
        while b_remaining > 0:
            if self.high_track and not self.engine.in_flight_names():
                self._issue_high(ctx, timestep, failures)
            occupied, _ = self.engine.tick(timestep)
            # Track B occupies its own dedicated slot outside the engine.
            if b_slot_busy_until == 0 and bi < len(b_queue):
                b_slot_busy_until = len(b_queue[bi].tokens)
                bi += 1
            if b_slot_busy_until > 0:
                b_slot_busy_until -= 1
                b_remaining -= 1
                occupied += 1
            cost += model.c_iter + model.c_slot * occupied
            tokens_processed += occupied
        latency = cost + model.c_encode + model.c_decode

        for g in track_b:
            self._prev_b[g.step.name] = g.tokens
        final = self.cache.snapshot()
        contents = {name: final.tokens_of(name) for name in self.schema.names}
        for g in track_b:
            contents[g.step.name] = g.tokens
        steps = tuple((s.name, contents[s.name]) for s in self.schema.steps)
        action = decode_action(contents[self.schema.action_step.name],
                               self.schema.action_dim)
        trace = ReasoningTrace(timestep, steps, action)
        staleness = final.staleness(timestep, [s.name for s in self.schema.steps])
        for g in track_b:
            staleness[g.step.name] = 0
        return StepResult(trace, action, latency, staleness,
                          generated_tokens=tokens_processed,
                          failures=tuple(failures))


_RUNNERS = {
    "sequential": SequentialRunner,
    "parallel_sync": ParallelSyncRunner,
    "parallel_async": ParallelAsyncRunner,
    "k_step": KStepRunner,
    "two_track": TwoTrackRunner,
}


def make_runner(config: SchedulerConfig, backend: GenerationBackend,
                schema: StepSchema) -> _BaseRunner:
    return _RUNNERS[config.mode](backend, schema, config)


# ---------------------------------------------------------------------------
# Single-timestep entry points
# ---------------------------------------------------------------------------


def run_sequential(ctx: Context, backend: GenerationBackend, schema: StepSchema,
                   config: SchedulerConfig | None = None) -> StepResult:
    runner = SequentialRunner(backend, schema, config or SchedulerConfig())
    return runner.step(ctx, 0)


def run_parallel_sync(ctx: Context, backend: GenerationBackend, schema: StepSchema,
                      prev: ReasoningTrace | None,
                      config: SchedulerConfig | None = None) -> StepResult:
    runner = ParallelSyncRunner(
        backend, schema, config or SchedulerConfig(mode="parallel_sync"))
    if prev is None:
        return runner.step(ctx, 0)
    runner._prev_trace = prev
    return runner.step(ctx, prev.timestep + 1)


def run_parallel_async(ctx: Context, backend: GenerationBackend, schema: StepSchema,
                       cache: CachedTrace, timestep: int = 1,
                       config: SchedulerConfig | None = None,
                       runner: ParallelAsyncRunner | None = None) -> StepResult:
    """One async timestep. Pass a persistent `runner` to carry in-flight
    background requests across calls; with only a cache, background work
    not finished by action completion is abandoned at return."""
    if runner is None:
        runner = ParallelAsyncRunner(
            backend, schema, config or SchedulerConfig(mode="parallel_async"))
        runner.cache = cache
        runner._warm = True
        runner._prev_action = cache.snapshot().tokens_of(schema.action_step.name)
    return runner.step(ctx, timestep)


def run_k_step(ctx: Context, backend: GenerationBackend, schema: StepSchema,
               cache: CachedTrace, k: int, timestep: int = 0,
               config: SchedulerConfig | None = None) -> StepResult:
    runner = KStepRunner(
        backend, schema, config or SchedulerConfig(mode="k_step", k=k))
    runner.cache = cache
    return runner.step(ctx, timestep)


def run_two_track(ctx: Context, backend: GenerationBackend, schema: StepSchema,
                  cache: CachedTrace, timestep: int = 1,
                  config: SchedulerConfig | None = None,
                  high_track: bool = True,
                  runner: TwoTrackRunner | None = None) -> StepResult:
    if runner is None:
        runner = TwoTrackRunner(
            backend, schema, config or SchedulerConfig(mode="two_track"),
            high_track=high_track)
        runner.cache = cache
        runner._warm = True
    return runner.step(ctx, timestep)


# ---------------------------------------------------------------------------
# Episode driver
# ---------------------------------------------------------------------------


def observation_for(seed: int, timestep: int) -> bytes:
    """Deterministic per-timestep observation payload."""
    h = hashlib.blake2b(digest_size=24)
    h.update(seed.to_bytes(16, "little", signed=True))
    h.update(timestep.to_bytes(8, "little"))
    return h.digest()


def run_episode(
    config: SchedulerConfig,
    episode_len: int,
    backend: GenerationBackend,
    schema: StepSchema,
    seed: int = 0,
    instruction: str = "pick up the object and place it on the target",
) -> tuple[list[StepResult], dict]:
    """Drive episode_len control timesteps and summarize them."""
    if episode_len < 1:
        raise ConfigError("episode_len", "must be >= 1")
    runner = make_runner(config, backend, schema)
    results: list[StepResult] = []
    try:
        for t in range(episode_len):
            ctx = backend.encode(instruction, observation_for(seed, t))
            results.append(runner.step(ctx, t))
    except EpisodeAborted as exc:
        exc.partial_results = results
        raise
    return results, summarize_results(config.mode, results, schema)


def summarize_results(mode: str, results: Sequence[StepResult],
                      schema: StepSchema) -> dict:
    lat = np.asarray([r.latency_ms for r in results], dtype=np.float64)
    staleness_hist: dict[str, dict[int, int]] = {
        s.name: {} for s in schema.reasoning_steps
    }
    for r in results:
        for name, val in r.staleness.items():
            if name in staleness_hist:
                hist = staleness_hist[name]
                hist[val] = hist.get(val, 0) + 1
    return {
        "mode": mode,
        "timesteps": len(results),
        "latency_mean_ms": float(lat.mean()),
        "latency_std_ms": float(lat.std()),  # population
        "total_tokens": int(sum(r.generated_tokens for r in results)),
        "failures": int(sum(len(r.failures) for r in results)),
        "staleness_histogram": staleness_hist,
    }
