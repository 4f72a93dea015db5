"""Command-line interface: instance generation, inspection, experiment runs."""

from __future__ import annotations

import argparse
import json
import sys

from .errors import (
    DegenerateInstanceError,
    GenerationFailureError,
    HintmatchError,
    InvalidArgumentError,
    ProtocolFailureError,
    TooLargeError,
)
from .harness import ALL_POLICIES, ExperimentConfig, diagnostics, run_experiment
from .instances import RewardMatrix, generate_instance, summarize

EXIT_CODES = {
    InvalidArgumentError: 2,
    DegenerateInstanceError: 3,
    TooLargeError: 4,
    GenerationFailureError: 5,
    ProtocolFailureError: 6,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hintmatch",
        description="Simulate hinted multi-agent bandit policies over a collision channel.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-instance", help="rejection-sample an instance with a target gap")
    gen.add_argument("--m", type=int, required=True, help="number of agents")
    gen.add_argument("--k", type=int, required=True, help="number of arms")
    gen.add_argument("--gap-min", type=float, required=True)
    gen.add_argument("--gap-max", type=float, required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True, help="path for the instance JSON")

    summ = sub.add_parser("summarize", help="enumerate an instance's optimum and gap")
    summ.add_argument("--instance", required=True)
    summ.add_argument("--delta", type=float, default=None,
                      help="also report the kl-scale gap at this slack")

    run = sub.add_parser("run", help="run a replicated experiment and emit CSV")
    run.add_argument("--config", help="JSON config file; flags below override it")
    run.add_argument("--instance", help="instance JSON file")
    run.add_argument("--policy", choices=ALL_POLICIES)
    run.add_argument("--horizon", type=int)
    run.add_argument("--reps", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--gap", type=float, help="known minimum gap (hdetc only)")
    run.add_argument("--out", help="CSV output path (defaults to stdout)")
    run.add_argument("--trace", help="per-round JSONL trace path (single replication only)")
    run.add_argument("--workers", type=int)
    run.add_argument("--no-hints", action="store_true",
                     help="disable hint queries (centralized ablation)")
    return parser


def _resolve_instance(source) -> RewardMatrix:
    if isinstance(source, str):
        return RewardMatrix.load(source)
    if isinstance(source, dict):
        if "generator" in source:
            g = source["generator"]
            return generate_instance(
                num_agents=int(g["m"]), num_arms=int(g["k"]),
                gap_min=float(g["gap_min"]), gap_max=float(g["gap_max"]),
                seed=int(g["seed"]),
            )
        return RewardMatrix.from_dict(source)
    raise InvalidArgumentError("instance must be a path or an instance/generator object")


def _cmd_gen_instance(args) -> int:
    matrix = generate_instance(args.m, args.k, args.gap_min, args.gap_max, args.seed)
    matrix.save(args.out)
    summary = summarize(matrix)
    print(json.dumps({
        "out": args.out,
        "M": matrix.num_agents,
        "K": matrix.num_arms,
        "optimal_matching": list(summary.optimal_matching.arm_of),
        "optimal_utility": summary.optimal_utility,
        "min_gap": summary.min_gap,
    }))
    return 0


def _cmd_summarize(args) -> int:
    matrix = RewardMatrix.load(args.instance)
    summary = summarize(matrix)
    payload = {
        "M": matrix.num_agents,
        "K": matrix.num_arms,
        "optimal_matching": list(summary.optimal_matching.arm_of),
        "optimal_utility": summary.optimal_utility,
        "min_gap": summary.min_gap,
    }
    if args.delta is not None:
        payload.update(diagnostics(summary, args.delta))
    print(json.dumps(payload))
    return 0


def _cmd_run(args) -> int:
    raw = {}
    if args.config:
        with open(args.config) as handle:
            raw = json.load(handle)
    instance_source = args.instance if args.instance else raw.get("instance")
    if instance_source is None:
        raise InvalidArgumentError("an instance is required (flag or config)")
    config = ExperimentConfig(
        instance=_resolve_instance(instance_source),
        policy=args.policy or raw.get("policy", ""),
        horizon=args.horizon or raw.get("horizon", 0),
        replications=args.reps or raw.get("replications", 0),
        base_seed=args.seed if args.seed is not None else raw.get("base_seed", 0),
        gap=args.gap if args.gap is not None else raw.get("gap"),
        hints_enabled=(not args.no_hints) and raw.get("hints_enabled", True),
        workers=args.workers if args.workers is not None else raw.get("workers"),
        trace_path=args.trace if args.trace is not None else raw.get("trace"),
    )
    result = run_experiment(config)
    out = args.out or raw.get("output")
    if out:
        result.write_csv(out)
    else:
        from .harness import CSV_COLUMNS
        print(",".join(CSV_COLUMNS))
        for row in result.rows:
            print(",".join(str(row[c]) for c in CSV_COLUMNS))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "gen-instance": _cmd_gen_instance,
        "summarize": _cmd_summarize,
        "run": _cmd_run,
    }
    try:
        return handlers[args.command](args)
    except HintmatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for klass, code in EXIT_CODES.items():
            if isinstance(exc, klass):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
