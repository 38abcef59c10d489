"""Command-line entry point: ``sonswarm run | batch | plot``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .errors import SonswarmError
from .scenario import load_scenario

log = logging.getLogger("sonswarm")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sonswarm", description="LLM-assisted SoNS swarm trials")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a single trial")
    run.add_argument("--scenario", required=True, help="scenario file, or a bundled name (demo, sim)")
    run.add_argument("--llm", required=True, help="mock:<example1|example2|faulty|alternate> or endpoint")
    run.add_argument("--seed", type=_u64, default=None)
    run.add_argument("--out", default=None, help="directory for trace/conversation/metrics files")

    batch = sub.add_parser("batch", help="run independent trials with consecutive seeds")
    batch.add_argument("--scenario", required=True)
    batch.add_argument("--llm", required=True, help="as for run; mock:mixed assigns modes with the seeded picker")
    batch.add_argument("--trials", type=int, default=20)
    batch.add_argument("--base-seed", type=_u64, default=0)
    batch.add_argument("--out", required=True)
    batch.add_argument("--workers", type=int, default=1)
    batch.add_argument("--faulty-fraction", type=float, default=0.15, help="share of faulty trials under mock:mixed")

    plot = sub.add_parser("plot", help="stacked-bar data from a metrics CSV")
    plot.add_argument("--metrics", required=True)
    plot.add_argument("--out", required=True, help="CSV path; a .svg path renders the chart instead")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            scenario = load_scenario(args.scenario)
            result = harness.run_trial(scenario, harness.parse_llm(args.llm), args.seed)
            if args.out:
                harness.write_trial(result, args.out)
            print(harness.summarize([result.metrics]), end="")
        elif args.command == "batch":
            scenario = load_scenario(args.scenario)
            summary, _ = harness.run_batch(
                scenario, harness.parse_llm(args.llm), args.trials, args.base_seed, args.out,
                workers=args.workers, faulty_fraction=args.faulty_fraction,
            )
            print(summary, end="")
        else:
            if args.out.endswith(".svg"):
                rows = harness.emit_plot_data(args.metrics, svg=args.out)
            else:
                rows = harness.emit_plot_data(args.metrics, out=args.out)
            print(f"{len(rows)} rows -> {args.out}")
    except (SonswarmError, ValueError, OSError) as exc:
        print(f"sonswarm: error: {exc}", file=sys.stderr)
        return 2
    return 0
