"""Command line: ``mfvpinn run CONFIG [overrides]`` and ``mfvpinn check``."""

from __future__ import annotations

import argparse
import logging
import sys

from .driver import RunConfig, run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfvpinn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress of every generation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the adaptive training loop")
    p_run.add_argument("config", help="YAML or JSON config file")
    p_run.add_argument("--strategy", type=int, choices=(1, 2, 3, 4))
    p_run.add_argument("--cm", type=int, choices=(4, 9), dest="C_M")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--problem")
    p_run.add_argument("--out")
    p_run.add_argument("--max-generations", type=int, dest="max_generations")

    sub.add_parser("check", help="run the quick numerical self-checks")
    return parser


def _cmd_run(args) -> int:
    try:
        cfg = RunConfig.from_file(args.config)
        cfg = cfg.override(
            strategy=args.strategy,
            C_M=args.C_M,
            seed=args.seed,
            problem=args.problem,
            out=args.out,
            max_generations=args.max_generations,
        )
    except (OSError, ValueError, TypeError) as exc:
        print(f"mfvpinn: invalid configuration: {exc}", file=sys.stderr)
        return 2
    result = run(cfg)
    for g in result.generations:
        print(f"generation {g.generation}: {g.n_patches} patches, H1 error {g.h1_error:.6e}, ES {g.es:.6e}")
    print(f"convergence rate {result.rate:.4f}; artifacts in {result.out_dir}")
    return 0


def _cmd_check(_args) -> int:
    from .checks import run_checks

    results = run_checks()
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )
    return {"run": _cmd_run, "check": _cmd_check}[args.command](args)
