"""Scheduling engine and simulation harness for structured reasoning
inference strategies: sequential, batched-parallel, asynchronous, and the
periodic/two-track baselines, with exact slot-iteration accounting on a
simulated clock."""

from .backends import (
    BackendError,
    GenerationBackend,
    RemoteBackend,
    RemoteEndpoint,
    ReplayBackend,
    StepGenerator,
    StepProfile,
    SyntheticBackend,
    SyntheticProfile,
    default_profile,
    remote_complete,
)
from .batching import (
    EMPTY,
    PAD,
    BatchError,
    BatchSchedule,
    GenerationRequest,
    LatencyModel,
    continuous_batch,
    padding_waste,
    schedule_cost,
    schedule_to_csv,
    static_batch,
)
from .metrics import (
    FaithfulnessReport,
    ProfileReport,
    SyntheticPolicy,
    action_faithfulness,
    faithfulness_curve,
    latency_summary,
    mode_comparison,
    profile_episodes,
)
from .schedulers import (
    CachedTrace,
    CacheSnapshot,
    ConfigError,
    EpisodeAborted,
    SchedulerConfig,
    StepResult,
    make_runner,
    run_episode,
    run_k_step,
    run_parallel_async,
    run_parallel_sync,
    run_sequential,
    run_two_track,
)
from .trace import (
    ActionVector,
    Context,
    ReasoningTrace,
    SchemaError,
    SchemaMismatchError,
    StepSchema,
    StepSpec,
    TraceParseError,
    default_schema,
    deserialize_trace,
    serialize_trace,
    trace_update_ratio,
    update_ratio,
)

__version__ = "0.1.0"
