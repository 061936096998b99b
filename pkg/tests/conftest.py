import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ecot_sched.backends import BackendError, StepGenerator, _encode_tokens
from ecot_sched.trace import Context, default_schema


@pytest.fixture(scope="session")
def schema():
    return default_schema()


class FixedBackend:
    """Emits a constant per-step token sequence regardless of context,
    prefix, or previous content; the strictest prefix-independent backend."""

    deterministic = True
    supports_prefix_conditioning = False

    def __init__(self, contents: dict[str, tuple[int, ...]]):
        self.contents = contents

    def encode(self, instruction, observation):
        return Context(instruction, observation, _encode_tokens(instruction, observation))

    def begin_step(self, context, prefix, step, prev_content):
        return StepGenerator(self.contents[step.name])


class FailingBackend:
    """Delegates to an inner backend but fails selected steps."""

    deterministic = True
    supports_prefix_conditioning = True

    def __init__(self, inner, fail_steps=(), fail_from_timestep=0):
        self.inner = inner
        self.fail_steps = set(fail_steps)
        self.fail_from = fail_from_timestep
        self._encodes = -1

    def encode(self, instruction, observation):
        self._encodes += 1
        return self.inner.encode(instruction, observation)

    def begin_step(self, context, prefix, step, prev_content):
        if step.name in self.fail_steps and self._encodes >= self.fail_from:
            raise BackendError(f"injected failure for {step.name}")
        return self.inner.begin_step(context, prefix, step, prev_content)
