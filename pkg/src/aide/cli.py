"""Command-line entry points.

    aide gen-corpus       synthesize an instruction draft corpus (jsonl)
    aide build-space      cluster drafts into a persisted relationship space
    aide eval             batch closed-loop evaluation with the metric suite
    aide ablate-retrieval retrieval runtime/accuracy comparison table
    aide error-analysis   injected-failure detection and recovery rates
    aide run-episode      single episode, optionally interactive
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigParams, load_config
from .harness import (
    ablate_retrieval,
    gen_corpus,
    interactive_episode,
    render_ablation,
    render_report,
    resolve_worlds,
    run_error_analysis,
    run_eval,
    write_report,
)
from .planner import write_trace
from .space import build_space, load_space, read_corpus, save_space


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="aide-config/1 document")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--space", type=Path, help="aide-space/1 document")
    parser.add_argument("--scenarios", type=Path, help="directory of aide-world/1 files")
    parser.add_argument("--report", type=Path, help="output report path")
    parser.add_argument("--interactive", action="store_true")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--noise", type=float, default=None, help="mock noise sigma")


def _params_and_paths(args) -> tuple[ConfigParams, dict]:
    if args.config:
        return load_config(args.config)
    return ConfigParams(), {}


def _resolved(args, paths: dict, key: str, flag_value):
    return flag_value if flag_value is not None else paths.get(key)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aide",
        description="Closed-loop task planning: corpus and space construction, "
        "batch evaluation, retrieval ablation, error analysis, single episodes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate synthetic instruction drafts")
    _add_common(p)
    p.add_argument("--out", type=Path, required=True, help="output jsonl path")
    p.add_argument("--count", type=int, default=None, help="draft count (default: config A)")

    p = sub.add_parser("build-space", help="build and persist the relationship space")
    _add_common(p)
    p.add_argument("--corpus", type=Path, required=True, help="draft jsonl path")
    p.add_argument("--out", type=Path, default=None, help="output space path (or --space)")

    p = sub.add_parser("eval", help="run the batch evaluation suite")
    _add_common(p)
    p.add_argument("--episodes", type=int, default=None, help="episode count (default: one per world)")
    p.add_argument("--max-steps", type=int, default=400)

    p = sub.add_parser("ablate-retrieval", help="retrieval method and threshold ablation")
    _add_common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument(
        "--method",
        choices=("both", "affordance", "textsim"),
        default="both",
    )
    p.add_argument("--queries", type=int, default=100)

    p = sub.add_parser("error-analysis", help="injected failure detection/recovery")
    _add_common(p)
    p.add_argument("--no-hints", action="store_true", help="disable human-recovery hints")
    p.add_argument("--max-steps", type=int, default=400)

    p = sub.add_parser("run-episode", help="run one scenario end to end")
    _add_common(p)
    p.add_argument("--world", required=True, help="world id (built-in or from --scenarios)")
    p.add_argument("--max-steps", type=int, default=400)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    params, paths = _params_and_paths(args)

    if args.command == "gen-corpus":
        count = args.count if args.count is not None else params.A
        drafts = gen_corpus(count, params.X, params.a, params.b, args.seed, path=args.out)
        print(f"wrote {len(drafts)} drafts to {args.out}")
        return 0

    if args.command == "build-space":
        out = args.out or _resolved(args, paths, "space", args.space)
        if out is None:
            print("build-space needs --out or --space", file=sys.stderr)
            return 2
        drafts = read_corpus(args.corpus)
        space = build_space(drafts, params, args.seed)
        save_space(space, out)
        print(f"built space with {space.record_count} records into {out}")
        return 0

    space_path = _resolved(args, paths, "space", args.space)
    scenarios = _resolved(args, paths, "scenarios", args.scenarios)
    report_path = _resolved(args, paths, "report", args.report)

    if args.command == "ablate-retrieval":
        drafts = read_corpus(args.corpus)
        methods = ("affordance", "textsim") if args.method == "both" else (args.method,)
        rows = ablate_retrieval(
            drafts, params, methods=methods, seed=args.seed, query_count=args.queries
        )
        text = render_ablation(rows, {"seed": args.seed, "queries": args.queries})
        print(text, end="")
        if report_path:
            Path(report_path).write_text(text, encoding="utf-8")
        return 0

    if space_path is None:
        print(f"{args.command} needs --space", file=sys.stderr)
        return 2
    space = load_space(space_path)
    worlds = resolve_worlds(scenarios)

    if args.command == "eval":
        traces: list = []
        report = run_eval(
            space,
            worlds,
            params,
            seed=args.seed,
            noise=args.noise,
            workers=args.workers,
            max_steps=args.max_steps,
            episodes=args.episodes,
            trace_sink=lambda eid, tr: traces.append((eid, tr)),
        )
        text = render_report(report)
        print(text, end="")
        if report_path:
            write_report(report, report_path, traces)
        return 0

    if args.command == "error-analysis":
        report = run_error_analysis(
            space,
            worlds,
            params,
            seed=args.seed,
            noise=args.noise,
            max_steps=args.max_steps,
            with_hints=not args.no_hints,
        )
        text = render_report(report, title="error analysis")
        print(text, end="")
        if report_path:
            write_report(report, report_path, title="error analysis")
        return 0

    if args.command == "run-episode":
        if args.world not in worlds:
            print(f"unknown world {args.world!r}; have: {sorted(worlds)}", file=sys.stderr)
            return 2
        world = worlds[args.world]
        if args.interactive:
            trace = interactive_episode(
                world, space, params, seed=args.seed, noise=args.noise, max_steps=args.max_steps
            )
        else:
            from .harness import _run_one_episode

            _, trace = _run_one_episode(
                f"ep-{args.world}", world, space, params, args.seed, args.noise, args.max_steps
            )
        print(
            f"{world.world_id}: {trace.status}"
            + (f" ({trace.fail_reason})" if trace.fail_reason else "")
            + f" in {trace.steps} steps, {trace.wall_seconds:.3f}s"
        )
        if report_path:
            Path(report_path).unlink(missing_ok=True)
            write_trace(trace, report_path, f"ep-{args.world}")
            print(f"trace written to {report_path}")
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
