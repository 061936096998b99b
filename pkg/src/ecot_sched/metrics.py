"""Evaluation metrics: update-ratio profiles, latency summaries, and the
action-faithfulness curve against a synthetic policy oracle.

The synthetic policy is additive over reasoning steps with configurable
influence weights, so its ground-truth faithfulness curve is known by
construction; the metric machinery is what gets verified.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Optional, Sequence

import numpy as np

from .backends import stable_digest
from .schedulers import StepResult
from .trace import Context, ReasoningTrace, TokenSeq, trace_update_ratio

# Reference per-step latency ratios measured on the GPU deployment the
# default latency model is calibrated against; reported next to simulated
# ratios for side-by-side comparison.
REFERENCE_LATENCY_RATIOS = {
    "sequential/parallel_sync": 4997 / 2156,
    "sequential/parallel_async": 4997 / 686,
}


class _Welford:
    """Streaming mean and population variance."""

    __slots__ = ("n", "mean", "m2")

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, x: float) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    @property
    def std(self) -> float:
        return math.sqrt(self.m2 / self.n) if self.n else 0.0


@dataclass
class StepStatistics:
    ratio_mean: float
    ratio_std: float
    length_mean: float
    length_std: float


@dataclass
class ProfileReport:
    per_step: dict[str, StepStatistics]
    transitions: int
    samples: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("step,update_ratio_mean,update_ratio_std,length_mean,length_std\n")
        for name, s in self.per_step.items():
            buf.write(
                f"{name},{s.ratio_mean!r},{s.ratio_std!r},"
                f"{s.length_mean!r},{s.length_std!r}\n"
            )
        return buf.getvalue()


def profile_episodes(
    episodes: Sequence[Sequence[ReasoningTrace]],
) -> ProfileReport:
    """Per-step mean/std of the update ratio over consecutive trace pairs,
    plus token-length statistics, pooled across episodes. Stddevs are
    population stddevs."""
    if not episodes:
        raise ValueError("no episodes to profile")
    ratio_acc: dict[str, _Welford] = {}
    length_acc: dict[str, _Welford] = {}
    transitions = 0
    samples = 0
    for episode in episodes:
        if len(episode) < 2:
            raise ValueError("each episode needs at least 2 timesteps")
        for trace in episode:
            samples += 1
            for name, tokens in trace.steps[:-1]:
                length_acc.setdefault(name, _Welford()).add(len(tokens))
        for prev, nxt in zip(episode, episode[1:]):
            transitions += 1
            for name, ratio in trace_update_ratio(prev, nxt).items():
                ratio_acc.setdefault(name, _Welford()).add(ratio)
    per_step = {
        name: StepStatistics(
            ratio_mean=ratio_acc[name].mean,
            ratio_std=ratio_acc[name].std,
            length_mean=length_acc[name].mean,
            length_std=length_acc[name].std,
        )
        for name in ratio_acc
    }
    return ProfileReport(per_step, transitions, samples)


# ---------------------------------------------------------------------------
# Action faithfulness
# ---------------------------------------------------------------------------

UNIT = "unit"
HASHED = "hashed"


@lru_cache(maxsize=8192)
def _hashed_embedding(name: str, tokens: TokenSeq, dim: int) -> np.ndarray:
    # Positive per-dimension magnitudes in [0.5, 1.5] derived from the step
    # content, so weighted contributions never cancel across dimensions.
    base = stable_digest("embed", name, *tokens)
    out = np.empty(dim)
    for j in range(dim):
        out[j] = 0.5 + (stable_digest(base, j) % 10_000) / 10_000.0
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SyntheticPolicy:
    """Additive stand-in policy: action = base + sum of per-step influence
    contributions over the reasoning steps it is shown. With all weights
    zero the output is base_action regardless of input."""

    step_names: tuple[str, ...]          # reasoning steps, schema order
    weights: tuple[tuple[float, ...], ...]  # per step, per action dimension
    base_action: tuple[float, ...]
    embedding: str = HASHED

    def __post_init__(self):
        if len(self.weights) != len(self.step_names):
            raise ValueError("one weight vector per reasoning step required")
        dim = len(self.base_action)
        if any(len(w) != dim for w in self.weights):
            raise ValueError("weight vectors must match the action dimensionality")
        if self.embedding not in (UNIT, HASHED):
            raise ValueError(f"unknown embedding mode {self.embedding!r}")

    @property
    def action_dim(self) -> int:
        return len(self.base_action)

    @classmethod
    def uniform(cls, step_names: Sequence[str], weight: float = 1.0,
                action_dim: int = 7, embedding: str = HASHED) -> "SyntheticPolicy":
        return cls(
            step_names=tuple(step_names),
            weights=tuple((weight,) * action_dim for _ in step_names),
            base_action=(0.0,) * action_dim,
            embedding=embedding,
        )

    def _embed(self, name: str, tokens: TokenSeq) -> np.ndarray:
        if self.embedding == UNIT:
            return np.ones(self.action_dim)
        return _hashed_embedding(name, tokens, self.action_dim)

    def predict(self, ctx: Context | None,
                steps: Sequence[tuple[str, TokenSeq]]) -> np.ndarray:
        """Action from the reasoning steps provided; pure in its inputs."""
        out = np.asarray(self.base_action, dtype=np.float64).copy()
        index = {n: i for i, n in enumerate(self.step_names)}
        for name, tokens in steps:
            i = index.get(name)
            if i is None:
                continue
            out += np.asarray(self.weights[i]) * self._embed(name, tokens)
        return out


def action_faithfulness(policy: SyntheticPolicy, ctx: Context | None,
                        trace: ReasoningTrace, i: int) -> float:
    """L1 distance between the action predicted from the first i reasoning
    steps and the action predicted from all of them."""
    reasoning = trace.steps[:-1]
    n = len(reasoning)
    if not 0 <= i <= n:
        raise ValueError(f"prefix length {i} out of range [0, {n}]")
    full = policy.predict(ctx, reasoning)
    partial = policy.predict(ctx, reasoning[:i])
    return float(np.abs(partial - full).sum())


@dataclass
class FaithfulnessReport:
    af_mean: tuple[float, ...]   # indexed by prefix length 0..N
    af_std: tuple[float, ...]    # population stddev band
    samples: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("prefix_steps,af_mean,af_std\n")
        for i, (m, s) in enumerate(zip(self.af_mean, self.af_std)):
            buf.write(f"{i},{m!r},{s!r}\n")
        return buf.getvalue()


def faithfulness_curve(
    policy: SyntheticPolicy,
    episodes: Sequence[Sequence[ReasoningTrace]],
    sample_steps: int,
    seed: int = 0,
    contexts: Optional[Mapping[int, Context]] = None,
) -> FaithfulnessReport:
    """AF_i aggregated over uniformly sampled timesteps."""
    if sample_steps < 1:
        raise ValueError("sample_steps must be >= 1")
    pool = [trace for episode in episodes for trace in episode]
    if not pool:
        raise ValueError("no traces to sample")
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(pool), size=sample_steps)
    n = len(pool[0].steps) - 1
    acc = [_Welford() for _ in range(n + 1)]
    for p in picks:
        trace = pool[int(p)]
        ctx = contexts.get(trace.timestep) if contexts else None
        for i in range(n + 1):
            acc[i].add(action_faithfulness(policy, ctx, trace, i))
    return FaithfulnessReport(
        af_mean=tuple(a.mean for a in acc),
        af_std=tuple(a.std for a in acc),
        samples=sample_steps,
    )


# ---------------------------------------------------------------------------
# Latency summaries
# ---------------------------------------------------------------------------


@dataclass
class LatencySummary:
    mean_ms: float
    std_ms: float   # population
    count: int


def latency_summary(results: Sequence[StepResult]) -> LatencySummary:
    if not results:
        raise ValueError("no results to summarize")
    lat = np.asarray([r.latency_ms for r in results], dtype=np.float64)
    return LatencySummary(float(lat.mean()), float(lat.std()), len(results))


def mode_comparison(results_by_mode: Mapping[str, Sequence[StepResult]]) -> list[dict]:
    """One row per mode, sorted ascending by mean latency; includes the
    ratio of every other mode's mean to the fastest."""
    rows = []
    for mode, results in results_by_mode.items():
        s = latency_summary(results)
        rows.append({
            "mode": mode,
            "count": s.count,
            "latency_mean_ms": s.mean_ms,
            "latency_std_ms": s.std_ms,
        })
    rows.sort(key=lambda r: r["latency_mean_ms"])
    fastest = rows[0]["latency_mean_ms"] if rows else 0.0
    for r in rows:
        r["ratio_to_fastest"] = r["latency_mean_ms"] / fastest if fastest else 0.0
    return rows


def comparison_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    buf.write("mode,count,latency_mean_ms,latency_std_ms,ratio_to_fastest\n")
    for r in rows:
        buf.write(
            f"{r['mode']},{r['count']},{r['latency_mean_ms']!r},"
            f"{r['latency_std_ms']!r},{r['ratio_to_fastest']!r}\n"
        )
    return buf.getvalue()
