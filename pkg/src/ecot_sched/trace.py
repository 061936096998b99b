"""Structured reasoning-trace data model, diff metrics, and the log format.

A trace is the ordered set of reasoning steps a policy emits at one control
timestep, ending with the action step. Traces are immutable; diffing two
traces yields the per-step update ratio (normalized token edit distance).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .kernels import levenshtein

TokenSeq = tuple[int, ...]

HIGH = "high"
LOW = "low"


class SchemaError(ValueError):
    """Raised when a step schema or trace violates its invariants."""


class SchemaMismatchError(SchemaError):
    """Raised when two traces do not share a step schema."""


class TraceParseError(ValueError):
    """Raised on malformed trace log input; carries the byte offset."""

    def __init__(self, message: str, offset: int, line: int | None = None):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
        self.line = line


@dataclass(frozen=True)
class StepSpec:
    """One slot of the reasoning structure: a label, its level, and the
    token budget a generation of this step may not exceed."""

    name: str
    level: str
    max_tokens: int

    def __post_init__(self):
        if self.level not in (HIGH, LOW):
            raise SchemaError(f"step {self.name!r}: level must be 'high' or 'low'")
        if self.max_tokens < 1:
            raise SchemaError(f"step {self.name!r}: max_tokens must be positive")


@dataclass(frozen=True)
class StepSchema:
    """Ordered step structure. The last step is the action step; the ones
    before it are the N reasoning steps."""

    steps: tuple[StepSpec, ...]
    action_dim: int = 7

    def __post_init__(self):
        if len(self.steps) < 1:
            raise SchemaError("schema needs at least one step")
        names = [s.name for s in self.steps]
        if len(set(names)) != len(names):
            raise SchemaError("step names must be unique")
        if self.action_dim < 1:
            raise SchemaError("action_dim must be positive")

    @property
    def action_step(self) -> StepSpec:
        return self.steps[-1]

    @property
    def reasoning_steps(self) -> tuple[StepSpec, ...]:
        return self.steps[:-1]

    @property
    def num_reasoning(self) -> int:
        return len(self.steps) - 1

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.steps)

    def index_of(self, name: str) -> int:
        for i, s in enumerate(self.steps):
            if s.name == name:
                return i
        raise KeyError(name)

    def level_of(self, name: str) -> str:
        return self.steps[self.index_of(name)].level

    def high_level_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.reasoning_steps if s.level == HIGH)

    def low_level_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.reasoning_steps if s.level == LOW)


def default_schema(action_dim: int = 7) -> StepSchema:
    """Task/plan/subtask high-level tier, motion and grounding low-level
    tier, then the action step."""
    return StepSchema(
        steps=(
            StepSpec("task", HIGH, 96),
            StepSpec("plan", HIGH, 160),
            StepSpec("subtask", HIGH, 128),
            StepSpec("move", LOW, 48),
            StepSpec("gripper", LOW, 48),
            StepSpec("visible_objects", LOW, 224),
            StepSpec("action", LOW, 16),
        ),
        action_dim=action_dim,
    )


@dataclass(frozen=True)
class ActionVector:
    components: tuple[float, ...]

    def __post_init__(self):
        if not all(math.isfinite(c) for c in self.components):
            raise ValueError("action components must be finite")

    def __len__(self) -> int:
        return len(self.components)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.components, dtype=np.float64)


@dataclass(frozen=True)
class Context:
    """Encoded instruction + observation for one timestep."""

    instruction: str
    observation: bytes
    encoded: TokenSeq


@dataclass(frozen=True)
class ReasoningTrace:
    """All step contents emitted at timestep t, in schema order, with the
    decoded action once available."""

    timestep: int
    steps: tuple[tuple[str, TokenSeq], ...]
    action: Optional[ActionVector] = None

    def __post_init__(self):
        if self.timestep < 0:
            raise SchemaError("timestep must be non-negative")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.steps)

    def tokens_of(self, name: str) -> TokenSeq:
        for n, toks in self.steps:
            if n == name:
                return toks
        raise KeyError(name)

    def total_tokens(self) -> int:
        return sum(len(toks) for _, toks in self.steps)


def update_ratio(prev: Sequence[int], next: Sequence[int]) -> float:
    """Normalized token edit distance in [0, 1]; 0.0 when both empty."""
    denom = max(len(prev), len(next))
    if denom == 0:
        return 0.0
    dist = levenshtein(
        np.asarray(prev, dtype=np.int64), np.asarray(next, dtype=np.int64)
    )
    return dist / denom


def trace_update_ratio(prev: ReasoningTrace, next: ReasoningTrace) -> dict[str, float]:
    """Per-step update ratio between consecutive traces, action step
    excluded. Raises SchemaMismatchError when step structures differ."""
    if prev.names != next.names:
        raise SchemaMismatchError(
            f"incompatible traces: {prev.names} vs {next.names}"
        )
    out: dict[str, float] = {}
    for (name, a), (_, b) in zip(prev.steps[:-1], next.steps[:-1]):
        out[name] = update_ratio(a, b)
    return out


# ---------------------------------------------------------------------------
# Trace log format: one JSON object per line, field order fixed as
# {timestep, steps, action, wall_ms}; step entries are {name, level, tokens}.
# json.dumps emits shortest round-trip decimals, so logs are byte-stable.
# ---------------------------------------------------------------------------


def serialize_trace(
    trace: ReasoningTrace, schema: StepSchema, wall_ms: float = 0.0
) -> bytes:
    record = {
        "timestep": trace.timestep,
        "steps": [
            {"name": name, "level": schema.level_of(name), "tokens": list(tokens)}
            for name, tokens in trace.steps
        ],
        "action": list(trace.action.components) if trace.action is not None else None,
        "wall_ms": wall_ms,
    }
    return json.dumps(record, separators=(",", ":")).encode("utf-8")


def trace_content_bytes(trace: ReasoningTrace, schema: StepSchema) -> bytes:
    """Serialization with the timing field dropped; used to compare token
    content across scheduler modes byte for byte."""
    record = {
        "timestep": trace.timestep,
        "steps": [
            {"name": name, "level": schema.level_of(name), "tokens": list(tokens)}
            for name, tokens in trace.steps
        ],
        "action": list(trace.action.components) if trace.action is not None else None,
    }
    return json.dumps(record, separators=(",", ":")).encode("utf-8")


def _record_to_trace(record: dict) -> ReasoningTrace:
    steps = tuple(
        (entry["name"], tuple(int(t) for t in entry["tokens"]))
        for entry in record["steps"]
    )
    action = record.get("action")
    return ReasoningTrace(
        timestep=int(record["timestep"]),
        steps=steps,
        action=ActionVector(tuple(float(x) for x in action)) if action else None,
    )


def deserialize_trace(data: bytes, base_offset: int = 0, line: int | None = None) -> ReasoningTrace:
    trace, _ = parse_log_line(data, base_offset=base_offset, line=line)
    return trace


def parse_log_line(
    data: bytes, base_offset: int = 0, line: int | None = None
) -> tuple[ReasoningTrace, float]:
    """Parse one log line into (trace, wall_ms). Malformed input raises
    TraceParseError carrying the absolute byte offset."""
    try:
        record = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        pos = getattr(exc, "pos", 0) or 0
        raise TraceParseError(str(exc), base_offset + pos, line) from exc
    try:
        trace = _record_to_trace(record)
        wall_ms = float(record.get("wall_ms", 0.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceParseError(f"bad trace record: {exc}", base_offset, line) from exc
    return trace, wall_ms


def write_trace_log(
    path, entries: Iterable[tuple[ReasoningTrace, float]], schema: StepSchema
) -> None:
    with open(path, "wb") as fh:
        for trace, wall_ms in entries:
            fh.write(serialize_trace(trace, schema, wall_ms))
            fh.write(b"\n")


def read_trace_log(path) -> list[tuple[ReasoningTrace, float]]:
    out = []
    offset = 0
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, 1):
            stripped = raw.rstrip(b"\n")
            if stripped:
                out.append(parse_log_line(stripped, base_offset=offset, line=lineno))
            offset += len(raw)
    return out
