"""Command-line front end.

Subcommands:

* ``solve``    run one solver/seed cell of a config and write its trace
* ``grid``     run the full (solver x seed) grid with summaries
* ``metrics``  exact preconditioner quality numbers for a desk-scale config
* ``oracle``   dense reference spectrum of the configured problem

Exit codes: 0 on success, 1 when every requested run failed to converge
(or the computation errored), 2 for configuration problems.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .harness import (
    ConfigError,
    build_preconditioner,
    build_problem,
    emit_csv,
    load_config,
    run_grid,
    run_single,
)
from .linops import NumericalBreakdown
from .precond import quality_metrics
from .problems import dense_oracle, reference_smallest


def _add_common(parser):
    parser.add_argument("--config", required=True,
                        help="YAML run configuration file")
    parser.add_argument("--out", default=None,
                        help="output path (file or directory, command-dependent)")


def make_parser():
    parser = argparse.ArgumentParser(
        prog="pcgeig",
        description="Preconditioned CG-like eigensolvers for Hermitian "
                    "definite pencils")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run a single solver cell")
    _add_common(p_solve)
    p_solve.add_argument("--method", default=None,
                         help="override: solver method to run")
    p_solve.add_argument("--seed", type=int, default=None,
                         help="override: single seed")
    p_solve.add_argument("--tol", type=float, default=None,
                         help="override: residual tolerance")
    p_solve.add_argument("--max-iters", type=int, default=None,
                         help="override: iteration cap")
    p_solve.add_argument("--oracle", choices=("on", "off"), default=None,
                         help="override: compute the reference eigenvalue")

    p_grid = sub.add_parser("grid", help="run the full solver x seed grid")
    _add_common(p_grid)
    p_grid.add_argument("--workers", type=int, default=None,
                        help="override: parallel worker processes")

    p_metrics = sub.add_parser("metrics",
                               help="preconditioner quality (dense, small n)")
    _add_common(p_metrics)
    p_metrics.add_argument("--sigma", type=float, default=0.0,
                           help="shift for the quality pencil (default 0)")

    p_oracle = sub.add_parser("oracle", help="dense reference spectrum")
    _add_common(p_oracle)
    p_oracle.add_argument("--count", type=int, default=10,
                          help="how many smallest eigenvalues to print")
    return parser


def _cmd_solve(args):
    cfg = load_config(args.config)
    if args.tol is not None:
        cfg.tol_residual = args.tol
    if args.max_iters is not None:
        cfg.max_iters = args.max_iters
    if args.oracle is not None:
        cfg.oracle = args.oracle
    entry = None
    if args.method is not None:
        for cand in cfg.solvers:
            if cand.get("label", cand["method"]) == args.method \
                    or cand["method"] == args.method:
                entry = dict(cand)
                break
        if entry is None:
            entry = {"method": args.method}
    else:
        entry = dict(cfg.solvers[0])
    seed = args.seed if args.seed is not None else cfg.seeds[0]

    pencil = build_problem(cfg.problem)
    lambda1 = None
    if cfg.oracle == "on":
        lambda1 = float(reference_smallest(pencil, k=1)[0])
    result, summary = run_single(cfg, entry, seed, pencil=pencil,
                                 lambda1=lambda1)
    out = args.out or "%s_seed%03d.csv" % (summary["label"], seed)
    emit_csv(result.history, out)
    line = ("%(label)s seed=%(seed)d iterations=%(iterations)d "
            "converged=%(converged)s theta=%(theta).10e nu=%(nu_final).3e"
            % summary)
    if summary["theta_err"] is not None:
        line += " theta_err=%.3e" % summary["theta_err"]
    print(line)
    print("trace written to %s" % out)
    return 0 if result.converged else 1


def _cmd_grid(args):
    cfg = load_config(args.config)
    if args.out is not None:
        cfg.out_dir = args.out
    if args.workers is not None:
        cfg.workers = args.workers
    outcome = run_grid(cfg)
    for label, agg in sorted(outcome["aggregates"].items()):
        print("%-16s median_iters=%8.1f max_iters=%6d all_converged=%s"
              % (label, agg["median_iterations"], agg["max_iterations"],
                 agg["all_converged"]))
    print("traces and summaries in %s" % cfg.out_dir)
    any_ok = any(s["converged"] for s in outcome["summaries"])
    return 0 if any_ok else 1


def _cmd_metrics(args):
    cfg = load_config(args.config)
    pencil = build_problem(cfg.problem)
    t = build_preconditioner(cfg.preconditioner, pencil)
    quality = quality_metrics(pencil, t, args.sigma)
    text = json.dumps(quality.as_dict(), indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def _cmd_oracle(args):
    cfg = load_config(args.config)
    pencil = build_problem(cfg.problem)
    vals, _ = dense_oracle(pencil)
    count = min(args.count, len(vals))
    for j in range(count):
        print("lambda_%d = %.17e" % (j + 1, vals[j]))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write("index,eigenvalue\n")
            for j, v in enumerate(vals):
                fh.write("%d,%.17e\n" % (j + 1, v))
        print("full spectrum written to %s" % args.out)
    return 0


_COMMANDS = {
    "solve": _cmd_solve,
    "grid": _cmd_grid,
    "metrics": _cmd_metrics,
    "oracle": _cmd_oracle,
}


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except (NumericalBreakdown, ValueError) as exc:
        print("run failed: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
