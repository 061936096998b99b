"""Experiment specs, bundled presets, and artifact emission.

An experiment runs a grid of (scheduler config x repetition) cells over a
shared backend profile and writes, per cell, a line-delimited JSON trace
log and a per-timestep CSV, plus one cross-mode latency comparison table.
All artifacts are byte-reproducible under a fixed seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .backends import (
    GenerationBackend,
    RemoteBackend,
    RemoteEndpoint,
    StepProfile,
    SyntheticBackend,
    SyntheticProfile,
    default_profile,
)
from .batching import LatencyModel
from .metrics import REFERENCE_LATENCY_RATIOS, comparison_csv, mode_comparison
from .schedulers import (
    ConfigError,
    EpisodeAborted,
    SchedulerConfig,
    StepResult,
    run_episode,
)
from .trace import StepSchema, StepSpec, default_schema, serialize_trace


@dataclass(frozen=True)
class ModeEntry:
    config: SchedulerConfig
    label: str


@dataclass
class ExperimentSpec:
    name: str
    modes: list[ModeEntry]
    schema: StepSchema
    profile: SyntheticProfile
    latency: LatencyModel
    episode_len: int = 1
    repetitions: int = 1
    seed: int = 0
    slots: int = 8
    failure_policy: str = "reuse_stale"
    instruction: str = "pick up the object and place it on the target"
    backend: str = "synthetic"

    def __post_init__(self):
        if not self.name:
            raise ConfigError("name", "must be nonempty")
        if self.episode_len < 1:
            raise ConfigError("episode_len", "must be >= 1")
        if self.repetitions < 1:
            raise ConfigError("repetitions", "must be >= 1")
        if self.backend not in ("synthetic", "remote"):
            raise ConfigError("backend", f"unknown backend {self.backend!r}")
        labels = [m.label for m in self.modes]
        if len(set(labels)) != len(labels):
            raise ConfigError("modes", "mode labels must be unique")
        if not self.modes:
            raise ConfigError("modes", "at least one mode required")


def _require(d: dict, key: str, typ, default=None):
    if key not in d:
        if default is not None:
            return default
        raise ConfigError(key, "missing required key")
    val = d[key]
    if typ is float and isinstance(val, int):
        val = float(val)
    if not isinstance(val, typ):
        raise ConfigError(key, f"expected {typ.__name__}, got {type(val).__name__}")
    return val


def _schema_from_dict(d: dict) -> StepSchema:
    try:
        steps = tuple(
            StepSpec(s["name"], s["level"], int(s["max_tokens"]))
            for s in d["steps"]
        )
        return StepSchema(steps, action_dim=int(d.get("action_dim", 7)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("schema", str(exc)) from exc


def _profile_from_dict(d: dict, seed: int) -> SyntheticProfile:
    try:
        steps = {
            name: StepProfile(
                float(p["mean_tokens"]),
                float(p.get("stddev_tokens", 0.0)),
                float(p.get("change_probability", 1.0)),
            )
            for name, p in d["steps"].items()
        }
        return SyntheticProfile(
            steps=steps,
            seed=int(d.get("seed", seed)),
            vary_with_context=bool(d.get("vary_with_context", True)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("profile", str(exc)) from exc


def _latency_from_dict(d: dict) -> LatencyModel:
    try:
        return LatencyModel(
            c_iter=float(d.get("c_iter", 12.0)),
            c_slot=float(d.get("c_slot", 0.5)),
            c_encode=float(d.get("c_encode", 550.0)),
            c_decode=float(d.get("c_decode", 25.0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError("latency", str(exc)) from exc


def spec_from_dict(raw: dict) -> ExperimentSpec:
    name = _require(raw, "name", str)
    seed = int(_require(raw, "seed", int, 0))
    slots = int(_require(raw, "slots", int, 8))
    failure_policy = _require(raw, "failure_policy", str, "reuse_stale")
    latency = _latency_from_dict(raw.get("latency", {}))
    schema = (
        _schema_from_dict(raw["schema"]) if "schema" in raw else default_schema()
    )
    profile = (
        _profile_from_dict(raw["profile"], seed)
        if "profile" in raw
        else default_profile(seed)
    )
    mode_entries: list[ModeEntry] = []
    for entry in _require(raw, "modes", list):
        if isinstance(entry, str):
            entry = {"mode": entry}
        if not isinstance(entry, dict) or "mode" not in entry:
            raise ConfigError("modes", f"bad mode entry {entry!r}")
        cfg = SchedulerConfig(
            mode=entry["mode"],
            k=int(entry.get("k", 5)),
            slots=int(entry.get("slots", slots)),
            latency=latency,
            failure_policy=entry.get("failure_policy", failure_policy),
        )
        mode_entries.append(ModeEntry(cfg, entry.get("label", cfg.mode)))
    return ExperimentSpec(
        name=name,
        modes=mode_entries,
        schema=schema,
        profile=profile,
        latency=latency,
        episode_len=int(_require(raw, "episode_len", int, 1)),
        repetitions=int(_require(raw, "repetitions", int, 1)),
        seed=seed,
        slots=slots,
        failure_policy=failure_policy,
        instruction=_require(raw, "instruction", str,
                             "pick up the object and place it on the target"),
        backend=_require(raw, "backend", str, "synthetic"),
    )


def load_spec(path: str | Path) -> ExperimentSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config", "top-level value must be an object")
    return spec_from_dict(raw)


ALL_MODES = (
    {"mode": "sequential"},
    {"mode": "parallel_sync"},
    {"mode": "parallel_async"},
    {"mode": "k_step", "k": 5},
    {"mode": "two_track"},
)

PRESETS: dict[str, dict] = {
    # Five-way latency comparison on the calibrated profile.
    "table1-ratios": {
        "name": "table1-ratios",
        "modes": list(ALL_MODES),
        "episode_len": 100,
        "repetitions": 3,
        "seed": 7,
        "slots": 8,
    },
    # Long sequential episode for update-ratio/length profiling.
    "fig2-profile": {
        "name": "fig2-profile",
        "modes": [{"mode": "sequential"}],
        "episode_len": 2501,
        "repetitions": 1,
        "seed": 9,
    },
    # Tiny smoke spec: one mode, one timestep, one repetition.
    "mini": {
        "name": "mini",
        "modes": [{"mode": "sequential"}],
        "episode_len": 1,
        "repetitions": 1,
        "seed": 0,
    },
}

# Bundled batch-demo workloads: (lengths, slots, pad_to).
BATCH_WORKLOADS: dict[str, tuple[list[int], int, int | None]] = {
    "fig5": ([3, 6, 8, 9], 4, 11),
    "sixfold": ([1, 1, 1, 1, 1, 1, 1, 120], 8, 120),
}


def preset_spec(name: str) -> ExperimentSpec:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; have {sorted(PRESETS)}")
    return spec_from_dict(PRESETS[name])


@dataclass
class ExperimentOutcome:
    spec_name: str
    out_dir: Path
    cell_summaries: list[dict]
    comparison_rows: list[dict]
    aborted: bool = False

    def summary_json(self) -> dict:
        ratios: dict[str, float] = {}
        means = {row["mode"]: row["latency_mean_ms"] for row in self.comparison_rows}
        if "sequential" in means:
            for other, ref in (
                ("parallel_sync", "sequential/parallel_sync"),
                ("parallel_async", "sequential/parallel_async"),
            ):
                if other in means and means[other] > 0:
                    ratios[ref] = means["sequential"] / means[other]
                    ratios[ref + "_reference"] = REFERENCE_LATENCY_RATIOS[ref]
        return {
            "experiment": self.spec_name,
            "aborted": self.aborted,
            "cells": self.cell_summaries,
            "comparison": self.comparison_rows,
            "ratios": ratios,
        }


def _make_backend(spec: ExperimentSpec, rep: int) -> GenerationBackend:
    if spec.backend == "remote":
        return RemoteBackend(RemoteEndpoint.from_env())
    return SyntheticBackend(spec.profile.with_seed(spec.profile.seed + rep))


def _write_cell(cell_dir: Path, results: Sequence[StepResult],
                schema: StepSchema) -> None:
    cell_dir.mkdir(parents=True, exist_ok=True)
    with open(cell_dir / "traces.jsonl", "wb") as fh:
        for r in results:
            fh.write(serialize_trace(r.trace, schema, wall_ms=r.latency_ms))
            fh.write(b"\n")
    reasoning = [s.name for s in schema.reasoning_steps]
    with open(cell_dir / "timesteps.csv", "w", encoding="utf-8", newline="") as fh:
        cols = ["timestep", "latency_ms", "generated_tokens", "failures"]
        cols += [f"staleness_{n}" for n in reasoning]
        fh.write(",".join(cols) + "\n")
        for t, r in enumerate(results):
            row = [str(t), repr(r.latency_ms), str(r.generated_tokens),
                   str(len(r.failures))]
            row += [str(r.staleness.get(n, 0)) for n in reasoning]
            fh.write(",".join(row) + "\n")


def run_experiment(spec: ExperimentSpec, out_root: str | Path,
                   wall_clock: bool = False) -> ExperimentOutcome:
    out_dir = Path(out_root) / spec.name
    out_dir.mkdir(parents=True, exist_ok=True)
    cell_summaries: list[dict] = []
    results_by_mode: dict[str, list[StepResult]] = {}
    aborted = False
    for entry in spec.modes:
        config = entry.config
        if wall_clock:
            config = SchedulerConfig(
                mode=config.mode, k=config.k, slots=config.slots,
                latency=config.latency, failure_policy=config.failure_policy,
                wall_clock=True,
            )
        pooled: list[StepResult] = []
        for rep in range(spec.repetitions):
            backend = _make_backend(spec, rep)
            cell_dir = out_dir / entry.label / str(rep)
            try:
                results, summary = run_episode(
                    config, spec.episode_len, backend, spec.schema,
                    seed=spec.seed + rep, instruction=spec.instruction,
                )
            except EpisodeAborted as exc:
                _write_cell(cell_dir, exc.partial_results, spec.schema)
                cell_summaries.append({
                    "mode": entry.label, "rep": rep, "aborted": True,
                    "completed_timesteps": len(exc.partial_results),
                    "reason": str(exc),
                })
                aborted = True
                break
            _write_cell(cell_dir, results, spec.schema)
            summary = dict(summary, rep=rep, mode=entry.label)
            cell_summaries.append(summary)
            pooled.extend(results)
        if pooled:
            results_by_mode[entry.label] = pooled
        if aborted:
            break
    comparison_rows = mode_comparison(results_by_mode) if results_by_mode else []
    with open(out_dir / "comparison.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(comparison_csv(comparison_rows))
    return ExperimentOutcome(spec.name, out_dir, cell_summaries, comparison_rows,
                             aborted=aborted)
