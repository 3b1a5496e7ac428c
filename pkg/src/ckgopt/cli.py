"""Command-line entry point: ``ckgopt {run,benchmark,list-problems,show-optimum}``."""
from __future__ import annotations

import argparse
import logging
import sys

from .harness import benchmark, emit_results, load_config
from .problems import get_problem, list_problems


def _run(args, allow_lists):
    configs = load_config(args.config, allow_lists=allow_lists)
    for records, agg in benchmark(configs, args.workers):
        cfg = records[0].config
        paths = emit_results(records, args.output or cfg.output_path, agg)
        final = agg.mean_oc[-1]
        print(f"{cfg.label}: final mean OC {final:.6g} "
              f"({agg.n_replications} ok, {agg.n_failed} failed) -> {paths['aggregate']}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ckgopt", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run one config"),
                           ("benchmark", "run a matrix of problems/acquisitions")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="YAML/JSON key-value config file")
        p.add_argument("--output", help="override output_path")
        p.add_argument("--workers", type=int, default=None,
                       help="parallel replications (default: $CKGOPT_WORKERS or cores)")
    sub.add_parser("list-problems", help="list bundled problems")
    p = sub.add_parser("show-optimum", help="print the brute-forced optimum")
    p.add_argument("problem")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    if args.command == "list-problems":
        for name in list_problems():
            spec = get_problem(name)
            print(f"{name}\td={spec.domain.dim}\tK={spec.n_constraints}")
        return 0
    if args.command == "show-optimum":
        try:
            spec = get_problem(args.problem)
        except KeyError as exc:
            print(exc.args[0], file=sys.stderr)
            return 2
        x = ", ".join(format(v, ".17g") for v in spec.true_opt_point)
        print(f"x* = [{x}]\nf* = {spec.true_opt_value:.17g}")
        return 0
    try:
        return _run(args, allow_lists=args.command == "benchmark")
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
