"""Command-line benchmark harness (`smcei-bench`)."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bench import BenchmarkSpec, ml_reference_prep, run_benchmark, summarize_runs
from .testbed import TEST_FUNCTIONS


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smcei-bench",
        description="Benchmark runner for the SMC expected-improvement optimizer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute repeated seeded optimization runs")
    run.add_argument("--fn", required=True, choices=sorted(TEST_FUNCTIONS))
    run.add_argument("--alg", required=True, choices=["smc-ei", "ref-ei"])
    run.add_argument("--I", type=int, default=100, dest="n_particles",
                     help="number of hyperparameter particles")
    run.add_argument("--J", type=int, default=100, dest="candidates_per_particle",
                     help="candidate points per particle")
    run.add_argument("--budget", type=int, default=None,
                     help="total evaluations incl. the initial design")
    run.add_argument("--n0", type=int, default=None, dest="n_initial",
                     help="initial design size (default max(4, 2d))")
    run.add_argument("--runs", type=int, default=20)
    run.add_argument("--seed", type=int, default=42)
    run.add_argument("--always-resample", action="store_true",
                     help="resample and move every iteration instead of on ESS decay")
    run.add_argument("--theta-file", type=Path, default=None,
                     help="log-range file from prep-ref (required for ref-ei)")
    run.add_argument("--out", type=Path, required=True)

    prep = sub.add_parser("prep-ref", help="fit reference ranges by maximum likelihood")
    prep.add_argument("--fn", required=True, choices=sorted(TEST_FUNCTIONS))
    prep.add_argument("--design", type=int, default=500)
    prep.add_argument("--seed", type=int, default=7)
    prep.add_argument("--out", type=Path, required=True)

    summ = sub.add_parser("summarize", help="recompute summary.csv from run CSVs")
    summ.add_argument("dir", type=Path)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            spec = BenchmarkSpec(
                function=args.fn,
                algorithm=args.alg,
                out_dir=args.out,
                n_particles=args.n_particles,
                candidates_per_particle=args.candidates_per_particle,
                budget=args.budget,
                n_initial=args.n_initial,
                runs=args.runs,
                seed=args.seed,
                always_resample=args.always_resample,
                theta_file=args.theta_file,
            )
            summary = run_benchmark(spec)
            print(summary)
        elif args.command == "prep-ref":
            theta = ml_reference_prep(args.fn, args.design, args.seed, args.out)
            print(f"{args.out} (log-ranges {theta.log_ranges})")
        else:
            print(summarize_runs(args.dir))
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
