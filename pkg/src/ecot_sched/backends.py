"""Token-generation backends.

A backend turns (context, prefix, step spec, previous content) into a
generator that emits one token per engine iteration. Three implementations:
a seeded synthetic generator whose step statistics are configurable, a
replay generator that re-emits a logged episode, and a remote client
speaking a minimal HTTP completions protocol.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Protocol, Sequence

import numpy as np
import requests

from .trace import Context, ReasoningTrace, StepSpec, TokenSeq

logger = logging.getLogger(__name__)

TOKEN_SPACE = 2**32
ENCODED_CONTEXT_TOKENS = 16


class BackendError(Exception):
    """Base class for generation failures."""


class RemoteError(BackendError):
    def __init__(self, message: str, endpoint: str):
        super().__init__(f"{message} [endpoint {endpoint}]")
        self.endpoint = endpoint


class RemoteStatusError(RemoteError):
    def __init__(self, status: int, endpoint: str):
        super().__init__(f"unexpected HTTP status {status}", endpoint)
        self.status = status


class RemoteTimeoutError(RemoteError):
    pass


class RemoteProtocolError(RemoteError):
    pass


def stable_digest(*parts: bytes | str | int) -> int:
    """64-bit digest of the given parts, stable across processes."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        if isinstance(p, str):
            p = p.encode("utf-8")
        elif isinstance(p, int):
            p = p.to_bytes(16, "little", signed=True)
        h.update(p)
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


class StepGenerator:
    """Doles out a planned token sequence one token per next_token call."""

    def __init__(self, tokens: Sequence[int], truncated: bool = False,
                 reported_tokens: int | None = None):
        self.tokens: TokenSeq = tuple(int(t) for t in tokens)
        self.truncated = truncated
        # Remote backends may report a usage count; accounting trusts it.
        self.reported_tokens = (
            len(self.tokens) if reported_tokens is None else reported_tokens
        )
        self._pos = 0

    @property
    def done(self) -> bool:
        return self._pos >= len(self.tokens)

    def next_token(self) -> Optional[int]:
        if self.done:
            return None
        tok = self.tokens[self._pos]
        self._pos += 1
        return tok

    def drain(self) -> TokenSeq:
        self._pos = len(self.tokens)
        return self.tokens


class GenerationBackend(Protocol):
    deterministic: bool
    supports_prefix_conditioning: bool

    def encode(self, instruction: str, observation: bytes) -> Context: ...

    def begin_step(
        self,
        context: Context,
        prefix: TokenSeq,
        step: StepSpec,
        prev_content: TokenSeq,
    ) -> StepGenerator: ...


def _encode_tokens(instruction: str, observation: bytes) -> TokenSeq:
    if not instruction and not observation:
        return ()
    rng = np.random.default_rng(stable_digest("encode", instruction, observation))
    return tuple(int(t) for t in rng.integers(0, TOKEN_SPACE, size=ENCODED_CONTEXT_TOKENS))


@dataclass(frozen=True)
class StepProfile:
    """Statistics for one step: emitted length is a truncated Gaussian in
    [1, max_tokens]; change_probability is the per-timestep chance the
    content is regenerated instead of copied from the previous trace."""

    mean_tokens: float
    stddev_tokens: float = 0.0
    change_probability: float = 1.0

    def __post_init__(self):
        if self.mean_tokens <= 0 or self.stddev_tokens < 0:
            raise ValueError("mean_tokens must be positive, stddev non-negative")
        if not 0.0 <= self.change_probability <= 1.0:
            raise ValueError("change_probability must lie in [0, 1]")


@dataclass(frozen=True)
class SyntheticProfile:
    steps: dict[str, StepProfile]
    seed: int = 0
    # When False the sampler ignores the context, so every timestep (and
    # every scheduler mode) sees identical content for a given step.
    vary_with_context: bool = True

    def with_seed(self, seed: int) -> "SyntheticProfile":
        return replace(self, seed=seed)


def default_profile(seed: int = 0) -> SyntheticProfile:
    """Calibrated profile: ~350 reasoning tokens per timestep, longest step
    120, 7 action tokens. Change probabilities rise from the stable
    high-level tier to the volatile grounding step."""
    return SyntheticProfile(
        steps={
            "task": StepProfile(50, 4, 0.03),
            "plan": StepProfile(75, 6, 0.084),
            "subtask": StepProfile(70, 6, 0.15),
            "move": StepProfile(18, 2, 0.45),
            "gripper": StepProfile(15, 2, 0.30),
            "visible_objects": StepProfile(120, 8, 0.60),
            "action": StepProfile(7, 0, 1.0),
        },
        seed=seed,
    )


class SyntheticBackend:
    """Deterministic seeded generator. Each step draws its randomness from
    (profile seed, context digest, step name) only, so concurrent requests
    and scheduling order cannot perturb the emitted content."""

    deterministic = True
    supports_prefix_conditioning = True

    def __init__(self, profile: SyntheticProfile):
        self.profile = profile

    def encode(self, instruction: str, observation: bytes) -> Context:
        return Context(instruction, observation, _encode_tokens(instruction, observation))

    def _rng(self, context: Context, step: StepSpec) -> np.random.Generator:
        if self.profile.vary_with_context:
            ctx_part = stable_digest(context.instruction, context.observation)
        else:
            ctx_part = 0
        return np.random.default_rng(
            stable_digest("step", self.profile.seed, ctx_part, step.name)
        )

    def begin_step(
        self,
        context: Context,
        prefix: TokenSeq,
        step: StepSpec,
        prev_content: TokenSeq,
    ) -> StepGenerator:
        try:
            prof = self.profile.steps[step.name]
        except KeyError:
            raise BackendError(f"no synthetic profile for step {step.name!r}") from None
        rng = self._rng(context, step)
        changed = rng.random() < prof.change_probability
        if not changed and prev_content:
            return StepGenerator(prev_content)
        length = int(round(rng.normal(prof.mean_tokens, prof.stddev_tokens)))
        truncated = length > step.max_tokens
        length = min(max(length, 1), step.max_tokens)
        tokens = rng.integers(0, TOKEN_SPACE, size=length)
        return StepGenerator(tokens, truncated=truncated)


class ReplayBackend:
    """Re-emits a logged episode verbatim. encode() advances the episode
    cursor; begin_step looks the current timestep's step content up."""

    deterministic = True
    supports_prefix_conditioning = False

    def __init__(self, episode: Sequence[ReasoningTrace]):
        if not episode:
            raise ValueError("replay episode is empty")
        self.episode = list(episode)
        self._cursor = -1

    def rewind(self) -> None:
        self._cursor = -1

    def encode(self, instruction: str, observation: bytes) -> Context:
        self._cursor += 1
        if self._cursor >= len(self.episode):
            raise BackendError("replay episode exhausted")
        return Context(instruction, observation, _encode_tokens(instruction, observation))

    def begin_step(
        self,
        context: Context,
        prefix: TokenSeq,
        step: StepSpec,
        prev_content: TokenSeq,
    ) -> StepGenerator:
        trace = self.episode[max(self._cursor, 0)]
        try:
            tokens = trace.tokens_of(step.name)
        except KeyError:
            raise BackendError(
                f"replay episode has no step {step.name!r} at t={trace.timestep}"
            ) from None
        return StepGenerator(tokens[: step.max_tokens], truncated=len(tokens) > step.max_tokens)


# ---------------------------------------------------------------------------
# Remote completions protocol
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RemoteEndpoint:
    base_url: str
    timeout_ms: int = 10_000
    max_retries: int = 2
    max_connections: int = 8

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")

    @classmethod
    def from_env(cls, default_url: str = "http://127.0.0.1:8000", **kwargs) -> "RemoteEndpoint":
        return cls(os.environ.get("ECOT_SCHED_BASE_URL", default_url), **kwargs)


@dataclass
class CompletionResult:
    text: str
    tokens_reported: int
    retries: int


_RETRYABLE_STATUSES = {429, 500, 502, 503, 504}
_BACKOFF_BASE_S = 0.05


def remote_complete(
    endpoint: RemoteEndpoint,
    prompt: str,
    max_tokens: int,
    session: requests.Session | None = None,
) -> CompletionResult:
    """POST {prompt, max_tokens, stream:false} to <base_url>/v1/completions.

    Retries retryable statuses and timeouts up to max_retries with a short
    exponential backoff; other failures raise typed errors immediately.
    """
    if max_tokens == 0:
        return CompletionResult("", 0, 0)
    url = endpoint.base_url.rstrip("/") + "/v1/completions"
    body = {"prompt": prompt, "max_tokens": max_tokens, "stream": False}
    sess = session or requests
    last_err: RemoteError | None = None
    for attempt in range(endpoint.max_retries + 1):
        if attempt:
            time.sleep(_BACKOFF_BASE_S * 2 ** (attempt - 1))
        try:
            resp = sess.post(url, json=body, timeout=endpoint.timeout_ms / 1000.0)
        except requests.Timeout:
            last_err = RemoteTimeoutError("request timed out", endpoint.base_url)
            continue
        except requests.RequestException as exc:
            last_err = RemoteError(f"connection failed: {exc}", endpoint.base_url)
            continue
        if resp.status_code in _RETRYABLE_STATUSES:
            last_err = RemoteStatusError(resp.status_code, endpoint.base_url)
            continue
        if resp.status_code != 200:
            raise RemoteStatusError(resp.status_code, endpoint.base_url)
        try:
            payload = resp.json()
            text = payload["choices"][0]["text"]
            usage = int(payload["usage"]["completion_tokens"])
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise RemoteProtocolError(
                f"malformed completion response: {exc}", endpoint.base_url
            ) from exc
        return CompletionResult(text, usage, attempt)
    assert last_err is not None
    raise last_err


def default_prompt_builder(context: Context, prefix: TokenSeq, step: StepSpec) -> str:
    prefix_part = " ".join(str(t) for t in prefix)
    return f"{context.instruction}\n[{step.name}]\n{prefix_part}"


class RemoteBackend:
    """Fronts any server speaking the completions contract. Token ids are
    synthesized from the completion text; accounting uses the usage count
    the server reports."""

    deterministic = False
    supports_prefix_conditioning = True

    def __init__(self, endpoint: RemoteEndpoint, prompt_builder=default_prompt_builder):
        self.endpoint = endpoint
        self.prompt_builder = prompt_builder
        self.session = requests.Session()
        self.metrics = {"requests": 0, "retries": 0, "failures": 0}
        self._conn_limit = threading.Semaphore(endpoint.max_connections)
        self._metrics_lock = threading.Lock()

    def encode(self, instruction: str, observation: bytes) -> Context:
        return Context(instruction, observation, _encode_tokens(instruction, observation))

    def begin_step(
        self,
        context: Context,
        prefix: TokenSeq,
        step: StepSpec,
        prev_content: TokenSeq,
    ) -> StepGenerator:
        prompt = self.prompt_builder(context, prefix, step)
        with self._conn_limit:
            try:
                result = remote_complete(
                    self.endpoint, prompt, step.max_tokens, session=self.session
                )
            except RemoteError:
                with self._metrics_lock:
                    self.metrics["failures"] += 1
                raise
        with self._metrics_lock:
            self.metrics["requests"] += 1
            self.metrics["retries"] += result.retries
        tokens = tuple(
            stable_digest("remote-token", result.text, i) % TOKEN_SPACE
            for i in range(result.tokens_reported)
        )
        return StepGenerator(tokens, reported_tokens=result.tokens_reported)
