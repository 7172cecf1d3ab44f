"""Benchmark orchestration: build a problem, time solver variants, report.

A run times each requested screening arm over several trials. The solve
itself is timed (duality gap included in both arms); decoupling is timed
separately. When both arms run, their solutions must agree, otherwise
:class:`SolutionMismatch` is raised.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .data import (Dataset, GroupedProblem, expand_groups, oscar_lambdas, parse_libsvm,
                   sparsity_factor, standardize)
from .decouple import decouple
from .screening import ScreeningTrace
from .solvers import SolverConfig, apgd_solve, spgd_solve

logger = logging.getLogger(__name__)

SOLVERS = {"apgd": apgd_solve, "spgd": spgd_solve}

CSV_COLUMNS = ("spec_id", "solver", "screening", "trial", "wall_s", "iters", "gap",
               "active_groups", "rel_time_pct")
TIMING_FIELDS = ("wall_s", "rel_time_pct", "mean_s", "std_s", "median_s", "speedup", "decouple_s")

#: JSON report: an array with one object per experiment
REPORT_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "required": ["spec_id", "solver", "n", "d", "m", "p", "trials", "decouple_s",
                     "arms", "speedup", "max_solution_diff", "final_screening_rate", "rows"],
        "properties": {
            "spec_id": {"type": "string"},
            "solver": {"enum": ["apgd", "spgd"]},
            "n": {"type": "integer"},
            "d": {"type": "integer"},
            "m": {"type": "integer"},
            "p": {"type": "number"},
            "trials": {"type": "integer", "minimum": 1},
            "decouple_s": {"type": "number"},
            "arms": {
                "type": "object",
                "additionalProperties": {
                    "type": "object",
                    "required": ["mean_s", "std_s", "mean_iters", "rel_time_pct"],
                },
            },
            "speedup": {"type": ["number", "null"]},
            "max_solution_diff": {"type": ["number", "null"]},
            "final_screening_rate": {"type": ["number", "null"]},
            "rows": {
                "type": "array",
                "items": {"type": "object", "required": list(CSV_COLUMNS)},
            },
        },
    },
}


class SolutionMismatch(RuntimeError):
    """Screened and unscreened solutions differ beyond tolerance."""


def make_synthetic(n: int, d0: int, k_active_groups: int, noise_sigma: float,
                   seed: int) -> Dataset:
    """Gaussian design with ``k_active_groups`` features of coefficient +-1."""
    if n < 1 or d0 < 1:
        raise ValueError("n and d0 must be positive")
    if not 0 <= k_active_groups <= d0:
        raise ValueError("k_active_groups must be in [0, d0]")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d0))
    beta = np.zeros(d0)
    support = rng.choice(d0, size=k_active_groups, replace=False)
    beta[support] = rng.choice([-1.0, 1.0], size=k_active_groups)
    y = X @ beta + noise_sigma * rng.standard_normal(n)
    return Dataset(X, y, "regression", true_coef=beta)


@dataclass
class ExperimentSpec:
    """One benchmark configuration; ``synthetic`` is ``(n, d0, k, sigma)``."""

    spec_id: str = "exp"
    data_path: Optional[str] = None
    synthetic: Optional[Tuple[int, int, int, float]] = None
    n_features: Optional[int] = None
    standardize: bool = False
    group_max_size: int = 10
    group_lasso_weights: bool = False
    tau: float = 3.0
    sparsity_index: int = 1
    solver: str = "apgd"
    screening: str = "both"
    trials: int = 5
    seed: int = 0
    gap_tol: float = 1e-6
    max_iter: int = 100000
    gamma: Optional[float] = None
    batch_size: int = 30
    inner_iters: int = 30
    gate_ratio: Optional[float] = 0.5
    paper_literal: bool = False
    ref_gap_tol: float = 1e-10
    agree_tol: float = 1e-5

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.sparsity_index not in (1, 2, 3):
            raise ValueError("sparsity_index must be 1, 2 or 3")
        if self.solver not in SOLVERS:
            raise ValueError("solver must be one of %s" % sorted(SOLVERS))
        if self.screening not in ("on", "off", "both"):
            raise ValueError("screening must be on, off or both")
        if (self.data_path is None) == (self.synthetic is None):
            raise ValueError("give exactly one of data_path and synthetic")

    @property
    def arms(self) -> List[bool]:
        return {"off": [False], "on": [True], "both": [False, True]}[self.screening]

    @property
    def p(self) -> float:
        return sparsity_factor(self.sparsity_index, self.tau)


@dataclass
class TrialRow:
    spec_id: str
    solver: str
    screening: str
    trial: int
    wall_s: float
    iters: int
    gap: float
    active_groups: int
    rel_time_pct: float = 100.0
    converged: bool = True


@dataclass
class Aggregate:
    spec_id: str
    solver: str
    n: int
    d: int
    m: int
    p: float
    trials: int
    decouple_s: float
    arms: Dict[str, dict]
    speedup: Optional[float]
    max_solution_diff: Optional[float]
    final_screening_rate: Optional[float]
    rows: List[TrialRow]
    traces: List[Tuple[int, ScreeningTrace]] = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        out = asdict(self)
        out.pop("traces")
        out["rows"] = [asdict(r) for r in self.rows]
        return out


@dataclass
class Report:
    experiments: List[Aggregate] = field(default_factory=list)

    @property
    def rows(self) -> List[TrialRow]:
        return [r for e in self.experiments for r in e.rows]

    def merge(self, other: "Report") -> "Report":
        return Report(self.experiments + other.experiments)


def build_problem(spec: ExperimentSpec) -> GroupedProblem:
    if spec.data_path is not None:
        with open(spec.data_path) as fh:
            dataset = parse_libsvm(fh, spec.n_features)
    else:
        n, d0, k, sigma = spec.synthetic
        dataset = make_synthetic(int(n), int(d0), int(k), float(sigma), spec.seed)
    if spec.standardize:
        dataset = standardize(dataset)
    problem = expand_groups(dataset, spec.group_max_size, spec.seed, spec.group_lasso_weights)
    return problem.with_lambdas(oscar_lambdas(problem, spec.p))


def trial_seed(base: int, trial: int) -> int:
    return int(np.random.SeedSequence([base, trial]).generate_state(1)[0])


def solver_config(spec: ExperimentSpec, screening: bool, seed: int) -> SolverConfig:
    return SolverConfig(
        max_iter=spec.max_iter, gap_tol=spec.gap_tol, gamma=spec.gamma,
        batch_size=spec.batch_size, inner_iters=spec.inner_iters, screening=screening,
        gate_ratio=spec.gate_ratio if screening else None,
        paper_literal=spec.paper_literal, seed=seed)


def run_experiment(spec: ExperimentSpec) -> Report:
    """Build the problem once, then time every arm for ``spec.trials`` trials."""
    problem = build_problem(spec)
    t0 = time.perf_counter()
    dec = decouple(problem)
    decouple_s = time.perf_counter() - t0
    solve = SOLVERS[spec.solver]

    inactive = None
    if True in spec.arms:
        ref = apgd_solve(dec, SolverConfig(gap_tol=spec.ref_gap_tol, max_iter=spec.max_iter))
        inactive = ref.zero_groups(dec)

    rows: List[TrialRow] = []
    traces = []
    max_diff = None
    final_rate = None
    for trial in range(spec.trials):
        seed = trial_seed(spec.seed, trial)
        betas = {}
        for screening in spec.arms:
            run = solve(dec, solver_config(spec, screening, seed))
            label = "on" if screening else "off"
            rows.append(TrialRow(spec.spec_id, spec.solver, label, trial, run.wall_time,
                                 run.n_iter, run.final_gap, len(run.active),
                                 converged=run.converged))
            if not run.converged:
                logger.warning("%s trial %d (%s) hit max_iter", spec.spec_id, trial, label)
            betas[label] = run.beta_final
            if screening:
                run.trace.fill_rates(run.active.removed_log, inactive)
                traces.append((trial, run.trace))
                final_rate = float(run.trace.rates[-1])
        if len(betas) == 2:
            diff = float(np.max(np.abs(betas["on"] - betas["off"]), initial=0.0))
            max_diff = diff if max_diff is None else max(max_diff, diff)
            if diff > spec.agree_tol:
                raise SolutionMismatch(
                    "%s trial %d: screened and unscreened solutions differ by %.3e"
                    % (spec.spec_id, trial, diff))

    first = rows[0].screening
    base = float(np.mean([r.wall_s for r in rows if r.screening == first]))
    for r in rows:
        r.rel_time_pct = 100.0 * r.wall_s / base if base > 0 else 100.0
    arms = {}
    for label in ("off", "on"):
        sel = [r for r in rows if r.screening == label]
        if sel:
            times = np.array([r.wall_s for r in sel])
            arms[label] = {
                "mean_s": float(times.mean()),
                "std_s": float(times.std()),
                "median_s": float(np.median(times)),
                "mean_iters": float(np.mean([r.iters for r in sel])),
                "rel_time_pct": 100.0 * float(times.mean()) / base if base > 0 else 100.0,
            }
    speedup = None
    if len(arms) == 2 and arms["on"]["median_s"] > 0:
        speedup = arms["off"]["median_s"] / arms["on"]["median_s"]
    agg = Aggregate(spec.spec_id, spec.solver, problem.n, problem.d, problem.m, spec.p,
                    spec.trials, decouple_s, arms, speedup, max_diff, final_rate, rows, traces)
    return Report([agg])


def emit_report(report: Report, fmt: str, out_path: str) -> List[str]:
    """Write the report to ``out_path`` (a directory) and return the files written.

    ``csv`` gives ``report.csv`` with one row per (experiment, arm, trial);
    ``json`` gives ``report.json`` following :data:`REPORT_SCHEMA`. Screened
    runs' trajectories go to ``<spec_id>_trace.csv`` in both cases.
    """
    if fmt not in ("csv", "json"):
        raise ValueError("format must be csv or json")
    os.makedirs(out_path, exist_ok=True)
    written = []
    if fmt == "csv":
        path = os.path.join(out_path, "report.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in report.rows:
                w.writerow([r.spec_id, r.solver, r.screening, r.trial, repr(r.wall_s),
                            r.iters, repr(r.gap), r.active_groups, repr(r.rel_time_pct)])
    else:
        path = os.path.join(out_path, "report.json")
        with open(path, "w") as fh:
            json.dump([e.to_json() for e in report.experiments], fh, indent=2)
            fh.write("\n")
    written.append(path)
    for e in report.experiments:
        if not e.traces:
            continue
        tpath = os.path.join(out_path, "%s_trace.csv" % e.spec_id)
        with open(tpath, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("trial",) + ScreeningTrace.header)
            for trial, trace in e.traces:
                w.writerows(trace.rows(prefix=(trial,)))
        written.append(tpath)
    return written


def read_report_csv(path: str) -> List[dict]:
    """Parse ``report.csv`` back into typed rows."""
    casts = {"trial": int, "wall_s": float, "iters": int, "gap": float,
             "active_groups": int, "rel_time_pct": float}
    with open(path, newline="") as fh:
        return [{k: casts.get(k, str)(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def strip_timing(obj):
    """Drop wall-clock derived fields, recursively (for determinism checks)."""
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_FIELDS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj
