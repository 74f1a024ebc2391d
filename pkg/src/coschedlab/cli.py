"""Command-line entry point.

Subcommands:
  run      execute one experiment, writing trace.csv and summary.json
  oracle   noise-free brute-force search for the best static allocation
  compare  aggregate summary.json files into a cross-method table
  selftest fast internal consistency checks

Exit codes: 0 success, 2 invalid input, 3 calibration failure, 4 infeasible
scenario, 5 training failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import sys

from .config import METHODS, load_experiment
from .errors import (
    CalibrationError,
    InfeasibleScenarioError,
    InputDomainError,
    TrainingStepError,
)
from .harness import compare, find_summaries, oracle_static, run_experiment
from .selftest import run_selftest

_EXIT_CODES = (
    (InputDomainError, 2),
    (CalibrationError, 3),
    (InfeasibleScenarioError, 4),
    (TrainingStepError, 5),
)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coschedlab")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one experiment")
    run.add_argument("--config", required=True, help="experiment YAML file")
    run.add_argument("--method", required=True, choices=METHODS)
    run.add_argument("--seed", required=True, type=int)
    run.add_argument("--out", required=True, help="output directory")

    oracle = sub.add_parser("oracle", help="brute-force best static allocation")
    oracle.add_argument("--config", required=True)
    oracle.add_argument("--out", required=True)

    cmp_p = sub.add_parser("compare", help="aggregate run summaries")
    cmp_p.add_argument("--runs", required=True, nargs="+",
                       help="run directories or summary.json files")
    cmp_p.add_argument("--out", required=True)
    cmp_p.add_argument("--baseline", default="rl", choices=METHODS)

    sub.add_parser("selftest", help="fast internal consistency checks")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_experiment(args.config, args.method, args.seed)
            artifacts = run_experiment(cfg, args.out)
            print(f"wrote {artifacts.trace_path} and {artifacts.summary_path}")
        elif args.command == "oracle":
            cfg = load_experiment(args.config, "rapid", 0)
            result = oracle_static(cfg, args.out)
            best = result["best"]
            print(
                f"best static allocation: mbw_idx={best['mbw_idx']} "
                f"cf_idx={best['cf_idx']} "
                f"mean_be_instr_per_s={best['mean_be_instr_per_s']:.4g} "
                f"({result['n_feasible']} feasible)"
            )
        elif args.command == "compare":
            summaries = find_summaries(args.runs)
            _, text = compare(summaries, args.out, baseline_method=args.baseline)
            print(text, end="")
        else:
            return 1 if run_selftest() else 0
    except tuple(e for e, _ in _EXIT_CODES) as e:
        print(f"error: {e}", file=sys.stderr)
        for cls, code in _EXIT_CODES:
            if isinstance(e, cls):
                return code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
