"""Command-line entry point: ``cpialm`` runs the benchmark or the acceptance checks."""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from .bench import SOLVERS, BenchConfig, run_benchmark

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cpialm",
        description="Benchmark the APG-based and cutting-plane augmented Lagrangian "
                    "solvers on seeded random QCQPs, or run the acceptance checks.")
    p.add_argument("--n", type=int, default=200, help="problem dimension (default 200)")
    p.add_argument("--m", type=int, action="append",
                   help="number of constraints; repeat for several groups (default 1)")
    p.add_argument("--trials", type=int, default=3, help="instances per group (default 3)")
    p.add_argument("--seed", type=int, default=0, help="base seed; trial t uses seed+t")
    p.add_argument("--eps", type=float, default=1e-4, help="target KKT accuracy")
    p.add_argument("--beta0", type=float, default=1.0, help="initial penalty")
    p.add_argument("--sigma", type=float, default=10.0, help="penalty growth factor")
    p.add_argument("--max-outer", type=int, default=5, help="outer iterations per run")
    p.add_argument("--solver", choices=("apg", "cut", "both"), default="both")
    p.add_argument("--init", choices=("random", "warm"), default="random",
                   help="subproblem starting points")
    p.add_argument("--out", default="bench.csv", help="output path (default bench.csv)")
    p.add_argument("--format", choices=("csv", "markdown"), default="csv",
                   help="format of the file written to --out")
    p.add_argument("--verify", choices=("fast", "full"),
                   help="run the acceptance checks at this level instead of a benchmark")
    return p


def _run_verify(level: str) -> int:
    from .verify import verify_suite

    results = verify_suite(level, report=lambda line: print(line, flush=True))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)} of {len(results)} checks passed")
    return EXIT_FAILURE if failed else EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if args.verify:
        return _run_verify(args.verify)
    solvers = SOLVERS if args.solver == "both" else (args.solver,)
    try:
        cfg = BenchConfig(n=args.n, m_list=tuple(args.m or [1]), trials=args.trials,
                          base_seed=args.seed, eps=args.eps, beta0=args.beta0,
                          sigma=args.sigma, solver_set=solvers, init_mode=args.init,
                          output_path=args.out, format=args.format, max_outer=args.max_outer)
        report = run_benchmark(cfg)
    except (ValueError, OSError) as exc:
        print(f"cpialm: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for key, path in report.paths.items():
        print(f"wrote {key}: {path}")
    for r in report.failures:
        print(f"solver failure m={r.m} trial={r.trial} {r.solver}: {r.status}", file=sys.stderr)
    return EXIT_FAILURE if report.failures else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
