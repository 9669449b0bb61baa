"""Reproducible experiment harness: configs, seeded runs, CSV traces.

A run is fully determined by (problem spec, preconditioner spec, solver
settings, seed); the same tuple must produce byte-identical trace files.
History CSVs use the fixed header

    iter,theta,theta_err,nu,phi,delta_lambda,delta_phi,event

with floats printed through repr-faithful scientific notation so parsing a
trace back reproduces the history exactly.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np
import yaml

from .history import ConvergenceHistory, IterationRecord
from .linops import m_norm
from .precond import (
    DenseShiftedInverse,
    IdentityPreconditioner,
    incomplete_cholesky,
    jacobi_preconditioner,
)
from .problems import (
    gen_diag,
    gen_laplace1d,
    gen_laplace2d,
    gen_slit2d,
    load_problem_matrix_market,
    reference_smallest,
)
from .solvers import SolverConfig, solve

__all__ = [
    "CONFIG_VERSION",
    "CSV_HEADER",
    "emit_csv",
    "parse_csv",
    "history_bytes",
    "initial_guess",
    "RunConfig",
    "ConfigError",
    "load_config",
    "build_problem",
    "build_preconditioner",
    "run_single",
    "run_grid",
]

CONFIG_VERSION = 1

CSV_HEADER = ("iter", "theta", "theta_err", "nu", "phi",
              "delta_lambda", "delta_phi", "event")

_FLOAT_FMT = "%.17e"


class ConfigError(ValueError):
    """Harness configuration is missing, malformed or inconsistent."""


def _fmt(value):
    if value is None:
        return ""
    return _FLOAT_FMT % value


def emit_csv(history, path_or_buffer):
    """Write a convergence history in the fixed trace format.

    Deterministic byte-for-byte: fixed header, fixed float formatting,
    ``\\n`` newlines, events joined by ``;``.
    """
    own = isinstance(path_or_buffer, (str, os.PathLike))
    fh = open(path_or_buffer, "w", newline="") if own else path_or_buffer
    try:
        fh.write(",".join(CSV_HEADER) + "\n")
        for rec in history:
            row = [
                "%d" % rec.iteration,
                _fmt(rec.theta),
                _fmt(rec.theta_err),
                _fmt(rec.nu),
                _fmt(rec.phi),
                _fmt(rec.delta_lambda),
                _fmt(rec.delta_phi),
                ";".join(rec.events),
            ]
            fh.write(",".join(row) + "\n")
    finally:
        if own:
            fh.close()


def parse_csv(path_or_buffer):
    """Read a trace written by emit_csv back into a ConvergenceHistory."""
    own = isinstance(path_or_buffer, (str, os.PathLike))
    fh = open(path_or_buffer, "r", newline="") if own else path_or_buffer
    try:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError("unexpected trace header %r" % (header,))
        history = ConvergenceHistory()
        for row in reader:
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise ValueError("malformed trace row %r" % (row,))
            def opt(sval):
                return None if sval == "" else float(sval)
            events = tuple(row[7].split(";")) if row[7] else ()
            history.append(IterationRecord(
                iteration=int(row[0]),
                theta=float(row[1]),
                theta_err=opt(row[2]),
                nu=float(row[3]),
                phi=opt(row[4]),
                delta_lambda=opt(row[5]),
                delta_phi=opt(row[6]),
                events=events,
            ))
        return history
    finally:
        if own:
            fh.close()


def history_bytes(history):
    """The exact trace file contents as a string (for determinism checks)."""
    buf = io.StringIO()
    emit_csv(history, buf)
    return buf.getvalue()


def initial_guess(n, seed=0, style="ones", m=None):
    """Deterministic M-normalized starting vector.

    ``style='ones'`` is the constant vector (the customary reproducible
    choice); ``style='random-normal'`` draws standard normal entries from
    the seeded generator.
    """
    if style == "ones":
        x0 = np.ones(n)
    elif style == "random-normal":
        x0 = np.random.default_rng(seed).standard_normal(n)
    else:
        raise ValueError("unknown initial guess style %r" % style)
    scale = m_norm(m, x0)
    return x0 / scale


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_PROBLEM_KINDS = ("diag", "laplace1d", "laplace2d", "slit2d", "matrix-market")
_PRECOND_KINDS = ("identity", "jacobi", "ichol", "dense-shifted-inverse")


@dataclass
class RunConfig:
    """One experiment: a problem, a preconditioner, solvers, seeds."""

    problem: dict
    preconditioner: dict = field(default_factory=lambda: {"kind": "identity"})
    solvers: list = field(default_factory=lambda: [{"method": "lopcg"}])
    seeds: list = field(default_factory=lambda: [0])
    tol_residual: float = 1e-8
    max_iters: int = 500
    initial_style: str = "ones"
    oracle: str = "on"
    out_dir: str = "runs"
    workers: int = 1

    def __post_init__(self):
        if not isinstance(self.problem, dict) or "kind" not in self.problem:
            raise ConfigError("problem section needs a 'kind'")
        if self.problem["kind"] not in _PROBLEM_KINDS:
            raise ConfigError("unknown problem kind %r (choose from %s)"
                              % (self.problem["kind"],
                                 ", ".join(_PROBLEM_KINDS)))
        if self.preconditioner.get("kind", "identity") not in _PRECOND_KINDS:
            raise ConfigError("unknown preconditioner kind %r"
                              % self.preconditioner.get("kind"))
        if not self.solvers:
            raise ConfigError("at least one solver entry is required")
        for entry in self.solvers:
            if "method" not in entry:
                raise ConfigError("every solver entry needs a 'method'")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.oracle not in ("on", "off"):
            raise ConfigError("oracle must be 'on' or 'off'")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.initial_style not in ("ones", "random-normal"):
            raise ConfigError("initial_style must be 'ones' or 'random-normal'")


def load_config(path):
    """Load a YAML run configuration; raises ConfigError on any problem."""
    try:
        with open(path, "r") as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError("config file %r does not exist" % path) from None
    except yaml.YAMLError as exc:
        raise ConfigError("config file %r is not valid YAML: %s"
                          % (path, exc)) from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    version = raw.pop("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError("unsupported config_version %r (this release reads "
                          "version %d)" % (version, CONFIG_VERSION))
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError("unknown config keys: %s" % ", ".join(sorted(unknown)))
    try:
        return RunConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def build_problem(spec):
    """Instantiate the pencil described by a problem spec mapping."""
    kind = spec["kind"]
    if kind == "diag":
        if "values" in spec:
            values = np.asarray(spec["values"], dtype=float)
        else:
            n = int(spec.get("n", 100))
            lo = float(spec.get("lo", 1.0))
            hi = float(spec.get("hi", float(n)))
            values = np.linspace(lo, hi, n)
            cluster = spec.get("cluster_gap")
            if cluster is not None:
                values[1] = values[0] + float(cluster)
                values = np.sort(values)
        return gen_diag(values)
    if kind == "laplace1d":
        return gen_laplace1d(int(spec["n"]))
    if kind == "laplace2d":
        return gen_laplace2d(int(spec["nx"]), int(spec["ny"]),
                             widths=tuple(spec.get("widths", (1.0, 1.0))))
    if kind == "slit2d":
        return gen_slit2d(int(spec["nx"]), int(spec["ny"]),
                          slit=tuple(spec.get("slit", (0.1, 0.9))))
    if kind == "matrix-market":
        return load_problem_matrix_market(spec)
    raise ConfigError("unknown problem kind %r" % kind)


def build_preconditioner(spec, pencil):
    kind = spec.get("kind", "identity")
    if kind == "identity":
        return IdentityPreconditioner(pencil.n)
    if kind == "jacobi":
        return jacobi_preconditioner(pencil, sigma=float(spec.get("sigma", 0.0)))
    if kind == "ichol":
        return incomplete_cholesky(pencil.a,
                                   droptol=float(spec.get("droptol", 1e-2)),
                                   sigma=float(spec.get("sigma", 0.0)),
                                   m=pencil.m)
    if kind == "dense-shifted-inverse":
        return DenseShiftedInverse(pencil, float(spec["sigma"]))
    raise ConfigError("unknown preconditioner kind %r" % kind)


def _solver_config(cfg, entry, seed):
    kwargs = {k: v for k, v in entry.items() if k != "label"}
    kwargs.setdefault("tol_residual", cfg.tol_residual)
    kwargs.setdefault("max_iters", cfg.max_iters)
    kwargs["seed"] = seed
    try:
        return SolverConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError("bad solver entry %r: %s" % (entry, exc)) from None


def run_single(cfg, entry, seed, pencil=None, t=None, lambda1=None):
    """Execute one (solver entry, seed) cell; returns (result, summary dict)."""
    if pencil is None:
        pencil = build_problem(cfg.problem)
    if t is None:
        t = build_preconditioner(cfg.preconditioner, pencil)
    solver_cfg = _solver_config(cfg, entry, seed)
    x0 = initial_guess(pencil.n, seed=seed, style=cfg.initial_style,
                       m=pencil.m)
    start = time.perf_counter()
    result = solve(pencil, t, x0, solver_cfg, lambda1_ref=lambda1)
    elapsed = time.perf_counter() - start
    label = entry.get("label", solver_cfg.method)
    summary = {
        "label": label,
        "method": solver_cfg.method,
        "seed": seed,
        "iterations": result.iterations,
        "converged": bool(result.converged),
        "theta": result.theta_final,
        "theta_err": (None if lambda1 is None
                      else result.theta_final - lambda1),
        "nu_final": result.nu_final,
        "matvecs_a": result.matvecs["A"],
        "matvecs_t": result.matvecs["T"],
        "wall_time_s": elapsed,
    }
    return result, summary


def _grid_cell(args):
    cfg, entry, seed, lambda1 = args
    result, summary = run_single(cfg, entry, seed, lambda1=lambda1)
    return result.history, summary


def run_grid(cfg, write_traces=True):
    """Run every (solver, seed) cell of a RunConfig.

    Returns a dict with the per-cell summaries and per-label aggregates
    (median iterations over seeds, pairwise with identical seeds, so the
    comparisons are matched).  With ``write_traces`` the per-cell history
    CSVs, a summary.csv and a summary.json land in ``cfg.out_dir``.
    """
    pencil = build_problem(cfg.problem)
    lambda1 = None
    if cfg.oracle == "on":
        lambda1 = float(reference_smallest(pencil, k=1)[0])

    cells = [(entry, seed) for entry in cfg.solvers for seed in cfg.seeds]
    histories = {}
    summaries = []
    if cfg.workers > 1:
        args = [(cfg, entry, seed, lambda1) for entry, seed in cells]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for (entry, seed), (history, summary) in zip(
                    cells, pool.map(_grid_cell, args)):
                histories[(summary["label"], seed)] = history
                summaries.append(summary)
    else:
        t = build_preconditioner(cfg.preconditioner, pencil)
        for entry, seed in cells:
            result, summary = run_single(cfg, entry, seed, pencil=pencil,
                                         t=t, lambda1=lambda1)
            histories[(summary["label"], seed)] = result.history
            summaries.append(summary)

    aggregates = {}
    for entry in cfg.solvers:
        label = entry.get("label", entry["method"])
        rows = [s for s in summaries if s["label"] == label]
        iters = np.array([s["iterations"] for s in rows])
        aggregates[label] = {
            "median_iterations": float(np.median(iters)),
            "max_iterations": int(iters.max()),
            "all_converged": bool(all(s["converged"] for s in rows)),
            "median_wall_time_s": float(np.median(
                [s["wall_time_s"] for s in rows])),
            "total_matvecs_a": int(sum(s["matvecs_a"] for s in rows)),
        }

    out = {"summaries": summaries, "aggregates": aggregates,
           "lambda1": lambda1, "n": pencil.n}
    if write_traces:
        os.makedirs(cfg.out_dir, exist_ok=True)
        for (label, seed), history in histories.items():
            name = "%s_seed%03d.csv" % (label.replace(" ", "_"), seed)
            emit_csv(history, os.path.join(cfg.out_dir, name))
        with open(os.path.join(cfg.out_dir, "summary.csv"), "w",
                  newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(summaries[0].keys()))
            writer.writeheader()
            writer.writerows(summaries)
        with open(os.path.join(cfg.out_dir, "summary.json"), "w") as fh:
            json.dump({"aggregates": aggregates, "lambda1": lambda1,
                       "n": pencil.n}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return out
