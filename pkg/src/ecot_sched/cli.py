"""Command-line entry point.

Subcommands: simulate, batch-demo, profile, faithfulness. Global flags
--config/--seed/--out/--wall-clock work on every subcommand; environment
variables prefixed ECOT_SCHED_ override defaults (flags win over both).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .batching import GenerationRequest, continuous_batch, padding_waste, static_batch
from .experiments import (
    BATCH_WORKLOADS,
    PRESETS,
    load_spec,
    preset_spec,
    run_experiment,
    spec_from_dict,
)
from .metrics import SyntheticPolicy, faithfulness_curve, profile_episodes
from .schedulers import ConfigError, EpisodeAborted
from .trace import TraceParseError, read_trace_log

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _env(name: str, default=None):
    return os.environ.get(f"ECOT_SCHED_{name}", default)


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=_env("CONFIG"),
                        help="experiment config JSON file")
    common.add_argument("--seed", type=int,
                        default=int(_env("SEED")) if _env("SEED") else None,
                        help="override the experiment seed")
    common.add_argument("--out", default=_env("OUT", "ecot-out"),
                        help="output directory root")
    common.add_argument("--wall-clock", action="store_true",
                        default=_env("WALL_CLOCK", "") not in ("", "0"),
                        help="report wall time instead of the simulated clock")

    parser = argparse.ArgumentParser(prog="ecot-sched")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", parents=[common],
                           help="run an experiment grid and write artifacts")
    p_sim.add_argument("--preset", choices=sorted(PRESETS),
                       help="bundled experiment spec")

    p_demo = sub.add_parser("batch-demo", parents=[common],
                            help="compare static vs continuous batching")
    p_demo.add_argument("lengths", nargs="*", type=int,
                        help="request lengths in tokens")
    p_demo.add_argument("--slots", type=int, default=4)
    p_demo.add_argument("--pad-to", type=int, default=None)
    p_demo.add_argument("--preset", choices=sorted(BATCH_WORKLOADS),
                        help="bundled workload")

    p_prof = sub.add_parser("profile", parents=[common],
                            help="per-step update-ratio and length statistics")
    p_prof.add_argument("log", help="trace log (one JSON record per line)")

    p_faith = sub.add_parser("faithfulness", parents=[common],
                             help="action-faithfulness curve from trace logs")
    p_faith.add_argument("logs", nargs="+", help="trace logs, one per mode")
    p_faith.add_argument("--samples", type=int, default=200)
    p_faith.add_argument("--policy",
                         help="policy JSON: {weights:{step:w|[w..]}, "
                              "base_action:[..], embedding:unit|hashed}")
    return parser


def cmd_simulate(args) -> int:
    if args.preset and args.config:
        print("error: modes: pass either --preset or --config, not both",
              file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.config:
            spec = load_spec(args.config)
        elif args.preset:
            spec = preset_spec(args.preset)
        else:
            print("error: config: --preset or --config required", file=sys.stderr)
            return EXIT_CONFIG
        if args.seed is not None:
            raw = dict(PRESETS[args.preset]) if args.preset else json.load(
                open(args.config, encoding="utf-8"))
            raw["seed"] = args.seed
            spec = spec_from_dict(raw)
        outcome = run_experiment(spec, args.out, wall_clock=args.wall_clock)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EpisodeAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(outcome.summary_json(), indent=2))
    return EXIT_RUNTIME if outcome.aborted else EXIT_OK


def cmd_batch_demo(args) -> int:
    lengths = list(args.lengths)
    slots = args.slots
    pad_to = args.pad_to
    if args.preset:
        lengths, slots, pad_to = BATCH_WORKLOADS[args.preset]
    if not lengths:
        print("error: lengths: provide request lengths or --preset",
              file=sys.stderr)
        return EXIT_CONFIG
    requests = [
        GenerationRequest(id=i, step_index=i, prefix_len=0, target_len=n)
        for i, n in enumerate(lengths)
    ]
    try:
        stat = static_batch(requests, slots, pad_to)
        cont = continuous_batch(requests, slots)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    ratio = stat.occupied_slot_iterations / cont.occupied_slot_iterations
    print(f"lengths: {' '.join(str(n) for n in lengths)} | slots: {slots} | "
          f"pad_to: {pad_to if pad_to is not None else max(lengths)}")
    print(f"static occupied slot-iterations: {stat.occupied_slot_iterations}")
    print(f"continuous occupied slot-iterations: {cont.occupied_slot_iterations}")
    print(f"static makespan: {stat.makespan}")
    print(f"continuous makespan: {cont.makespan}")
    print(f"padding waste: {padding_waste(stat)!r}")
    print(f"static/continuous ratio: {ratio!r}")
    return EXIT_OK


def cmd_profile(args) -> int:
    try:
        entries = read_trace_log(args.log)
    except OSError as exc:
        print(f"error: log: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TraceParseError as exc:
        print(f"error: parse error at line {exc.line}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    traces = [t for t, _ in entries]
    try:
        report = profile_episodes([traces])
    except ValueError as exc:
        print(f"error: log: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / (Path(args.log).stem + "-profile.csv")
    out_path.write_text(report.to_csv(), encoding="utf-8")
    print(f"transitions: {report.transitions}")
    for name, s in report.per_step.items():
        print(f"{name}: update_ratio {s.ratio_mean:.4f} ± {s.ratio_std:.4f} | "
              f"length {s.length_mean:.1f} ± {s.length_std:.1f}")
    print(f"wrote {out_path}")
    return EXIT_OK


def _policy_from_args(args, step_names) -> SyntheticPolicy:
    if not args.policy:
        return SyntheticPolicy.uniform(step_names)
    with open(args.policy, encoding="utf-8") as fh:
        raw = json.load(fh)
    base = tuple(float(x) for x in raw.get("base_action", [0.0] * 7))
    dim = len(base)
    weights = []
    for name in step_names:
        w = raw.get("weights", {}).get(name, 0.0)
        if isinstance(w, (int, float)):
            weights.append((float(w),) * dim)
        else:
            weights.append(tuple(float(x) for x in w))
    return SyntheticPolicy(
        step_names=tuple(step_names),
        weights=tuple(weights),
        base_action=base,
        embedding=raw.get("embedding", "hashed"),
    )


def cmd_faithfulness(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for log in args.logs:
        try:
            entries = read_trace_log(log)
        except OSError as exc:
            print(f"error: log: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except TraceParseError as exc:
            print(f"error: parse error at line {exc.line}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        traces = [t for t, _ in entries]
        if not traces:
            print(f"error: log: {log} is empty", file=sys.stderr)
            return EXIT_CONFIG
        step_names = [name for name, _ in traces[0].steps[:-1]]
        try:
            policy = _policy_from_args(args, step_names)
        except (OSError, ValueError, json.JSONDecodeError) as exc:
            print(f"error: policy: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        seed = args.seed if args.seed is not None else 0
        report = faithfulness_curve(policy, [traces], args.samples, seed=seed)
        out_path = out_dir / (Path(log).stem + "-faithfulness.csv")
        out_path.write_text(report.to_csv(), encoding="utf-8")
        curve = " ".join(f"{m:.3f}" for m in report.af_mean)
        print(f"{log}: AF curve [{curve}] -> {out_path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "simulate": cmd_simulate,
        "batch-demo": cmd_batch_demo,
        "profile": cmd_profile,
        "faithfulness": cmd_faithfulness,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
