"""``gslope`` command line: ``synth``, ``solve`` and ``bench``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from .bench import (ExperimentSpec, SolutionMismatch, build_problem, emit_report, make_synthetic,
                    run_experiment, solver_config, SOLVERS)
from .data import write_libsvm
from .decouple import decouple
from .screening import SafenessViolation

EXIT_MISMATCH = 3


def _synthetic(text):
    try:
        n, d0, k, sigma = text.split(",")
        return int(n), int(d0), int(k), float(sigma)
    except ValueError:
        raise argparse.ArgumentTypeError("expected n,d0,k,sigma") from None


def _problem_args(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="LIBSVM file")
    src.add_argument("--synthetic", type=_synthetic, metavar="n,d0,k,sigma")
    p.add_argument("--n-features", type=int, help="force the column count of --data")
    p.add_argument("--standardize", action="store_true", help="unit-norm columns before grouping")
    p.add_argument("--group-max-size", type=int, default=10, metavar="s")
    p.add_argument("--group-lasso-weights", action="store_true", help="w_i = sqrt(|I_i|)")
    p.add_argument("--tau", type=float, default=3.0)
    p.add_argument("--sparsity-index", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--solver", choices=sorted(SOLVERS), default="apgd")
    p.add_argument("--gamma", type=float)
    p.add_argument("--batch-size", type=int, default=30)
    p.add_argument("--inner-iters", type=int, default=30)
    p.add_argument("--gap-tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=100000)
    p.add_argument("--gate-ratio", type=float, default=0.5,
                   help="start screening once gap <= ratio * P(b0); negative disables the gate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--paper-literal", action="store_true",
                   help="divide the mini-batch gradient difference by l (biased)")
    p.add_argument("--out", default=".", help="output directory")


def _spec(args, screening, trials=1, spec_id="exp"):
    return ExperimentSpec(
        spec_id=spec_id, data_path=args.data, synthetic=args.synthetic,
        n_features=args.n_features, standardize=args.standardize,
        group_max_size=args.group_max_size, group_lasso_weights=args.group_lasso_weights,
        tau=args.tau, sparsity_index=args.sparsity_index, solver=args.solver,
        screening=screening, trials=trials, seed=args.seed, gap_tol=args.gap_tol,
        max_iter=args.max_iter, gamma=args.gamma, batch_size=args.batch_size,
        inner_iters=args.inner_iters,
        gate_ratio=None if args.gate_ratio < 0 else args.gate_ratio,
        paper_literal=args.paper_literal)


def cmd_synth(args):
    n, d0, k, sigma = args.synthetic
    ds = make_synthetic(n, d0, k, sigma, args.seed)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w") as fh:
        write_libsvm(ds, fh)
    support = np.flatnonzero(ds.true_coef)
    print("wrote %s (n=%d, d0=%d, support=%s)" % (args.out, n, d0, support.tolist()))
    return 0


def cmd_solve(args):
    spec = _spec(args, args.screening)
    problem = build_problem(spec)
    dec = decouple(problem)
    run = SOLVERS[spec.solver](dec, solver_config(spec, args.screening == "on", spec.seed))
    os.makedirs(args.out, exist_ok=True)
    coef = os.path.join(args.out, "coef.csv")
    labels = problem.partition.labels()
    with open(coef, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("column", "group", "beta"))
        w.writerows((j, int(labels[j]), repr(float(v))) for j, v in enumerate(run.beta_final))
    run.trace.to_csv(os.path.join(args.out, "trace.csv"))
    nz = problem.m - len(run.zero_groups(dec))
    print("%s: %d iterations, gap %.3e, %d/%d groups nonzero, %d active, %.3fs%s"
          % (spec.solver, run.n_iter, run.final_gap, nz, problem.m, len(run.active),
             run.wall_time, "" if run.converged else " (max_iter reached)"))
    return 0


def cmd_bench(args):
    spec = _spec(args, args.screening, args.trials, args.spec_id)
    try:
        report = run_experiment(spec)
    except (SolutionMismatch, SafenessViolation) as exc:
        print("safeness check failed: %s" % exc, file=sys.stderr)
        return EXIT_MISMATCH
    for path in emit_report(report, args.format, args.out):
        print("wrote", path)
    agg = report.experiments[0]
    for label, arm in agg.arms.items():
        print("screening %-3s mean %.4fs (%.1f%%), %.1f iterations"
              % (label, arm["mean_s"], arm["rel_time_pct"], arm["mean_iters"]))
    if agg.speedup is not None:
        print("median speedup %.2fx, max |beta_on - beta_off| = %.2e"
              % (agg.speedup, agg.max_solution_diff))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="gslope", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic LIBSVM dataset")
    p.add_argument("--synthetic", type=_synthetic, required=True, metavar="n,d0,k,sigma")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output file")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("solve", help="solve one problem")
    _problem_args(p)
    p.add_argument("--screening", choices=("on", "off"), default="on")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="time solvers with and without screening")
    _problem_args(p)
    p.add_argument("--screening", choices=("on", "off", "both"), default="both")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--spec-id", default="exp")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    threads = os.environ.get("GSLOPE_THREADS")
    if threads:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=int(threads)):
            return args.func(args)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
