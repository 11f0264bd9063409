"""``simfold`` command-line interface."""

from __future__ import annotations

import argparse
import itertools
import logging
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .figures import FIGURES, build_figure
from .ipm import SolverOptions
from .kinetics import BUNDLED_MECHANISM, MechanismParseError, load_mechanism, mechanism_as_model
from .models import ContractViolation, DavisSkodjeModel, LinearModel
from .output import SCHEMA_VERSION, json_text, table_text
from .problem import FORWARD, REVERSE, VariationalProblem
from .sim import compute_manifold_grid, compute_sim_point, default_intervals

EXIT_OK, EXIT_SOLVER, EXIT_USAGE = 0, 1, 2
MECHANISM_KKT_TOLERANCE = 1e-6

FIX_REQUIREMENT = ("at least one progress variable must be fixed with --fix NAME=VALUE: the anchor "
                   "condition x_j(t*) = value is what selects a single trajectory of the family")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # let "--t0 -4e-4" through as a value, not an option
        self._negative_number_matcher = re.compile(r"^-(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$")

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    model: str
    mode: str
    gamma: float
    lam: float
    t0: float
    tf: float
    intervals: int
    degree: int
    fixed: list  # [(name, [values...])]
    temperature: float
    kkt_tolerance: float
    max_iter: int
    jobs: int
    out: Optional[str]
    extra: dict = field(default_factory=dict)

    def build_model(self):
        return make_model(self.model, self.gamma, self.lam, self.temperature)

    def options(self) -> SolverOptions:
        return SolverOptions(kkt_tolerance=self.kkt_tolerance, max_iterations=self.max_iter,
                             acceptable_tolerance=max(1e-6, self.kkt_tolerance))


def make_model(selector: str, gamma: float, lam: float, temperature: float):
    if selector == "linear":
        return LinearModel(gamma, lam)
    if selector == "davis-skodje":
        return DavisSkodjeModel(gamma)
    path = BUNDLED_MECHANISM if selector == "mechanism" else selector
    try:
        mech = load_mechanism(path)
    except FileNotFoundError:
        raise UsageError(f"no model named {selector!r} and no mechanism file at that path")
    except MechanismParseError as exc:
        raise UsageError(f"cannot parse mechanism {selector!r}: {exc}")
    return mechanism_as_model(mech, temperature)


def _is_mechanism(selector: str) -> bool:
    return selector not in ("linear", "davis-skodje")


def default_horizon(selector: str, mode: str) -> tuple[float, float]:
    if mode == FORWARD:
        return (0.0, 4e-4) if _is_mechanism(selector) else (0.0, 10.0)
    t0 = {"linear": -17.0, "davis-skodje": -8.0}.get(selector, -4e-4)
    return t0, 0.0


def parse_fix(text: str, allow_range: bool) -> tuple[str, list[float]]:
    """``NAME=V``, ``NAME=V1,V2,...`` or ``NAME=START:STOP:COUNT``."""
    name, sep, value = text.partition("=")
    name, value = name.strip(), value.strip()
    if not sep or not name or not value:
        raise UsageError(f"--fix expects NAME=VALUE, got {text!r}")
    try:
        if ":" in value:
            start, stop, count = value.split(":")
            n = int(count)
            if n < 1:
                raise ValueError
            values = list(np.linspace(float(start), float(stop), n))
        else:
            values = [float(v) for v in value.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse --fix value {value!r}")
    if not all(np.isfinite(values)):
        raise UsageError(f"--fix values must be finite, got {value!r}")
    if not allow_range and len(values) != 1:
        raise UsageError("point takes a single value per --fix; use grid for ranges")
    return name, values


def _common(p: argparse.ArgumentParser, solve: bool = True):
    p.add_argument("--model", default="linear",
                   help="linear, davis-skodje, mechanism (bundled H2 mechanism) or a mechanism file path")
    p.add_argument("--gamma", type=float, default=None,
                   help="time-scale gap of the test models (default 1.0 linear, 1.2 davis-skodje)")
    p.add_argument("--lam", type=float, default=1.0, help="slow rate of the linear model")
    p.add_argument("--temperature", type=float, default=3000.0, help="mechanism temperature in K")
    if not solve:
        return
    p.add_argument("--mode", choices=(FORWARD, REVERSE), default=REVERSE)
    p.add_argument("--t0", type=float, default=None, help="horizon start (default per model and mode)")
    p.add_argument("--tf", type=float, default=None, help="horizon end (default per model and mode)")
    p.add_argument("--fix", action="append", default=[], metavar="NAME=VALUE",
                   help="progress variable fixed at the anchor time; repeatable")
    p.add_argument("--grid-n", type=int, default=None, help="collocation intervals (default 200, 400 mechanism)")
    p.add_argument("--degree", type=int, choices=(1, 2, 3), default=3, help="Radau collocation stages")
    p.add_argument("--kkt-tol", type=float, default=None, help="KKT tolerance (default 1e-8, 1e-6 mechanism)")
    p.add_argument("--max-iter", type=int, default=300, help="interior-point iteration limit")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    p.add_argument("--out", default=None, help="output file (point, grid) or directory (figure, verify)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="simfold", description="Slow invariant manifolds by curvature-minimizing "
                     "trajectory optimization.")
    parser.add_argument("--version", action="version", version=f"simfold {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log solver progress (repeat for more)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("point", help="compute one SIM point and write a JSON result")
    _common(p)

    p = sub.add_parser("grid", help="sweep progress values (NAME=START:STOP:COUNT or lists) to CSV")
    _common(p)

    p = sub.add_parser("figure", help="write the CSV tables behind one figure")
    p.add_argument("figure", choices=FIGURES)
    p.add_argument("--grid-n", type=int, default=None)
    p.add_argument("--degree", type=int, choices=(1, 2, 3), default=3)
    p.add_argument("--kkt-tol", type=float, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("verify", help="run the acceptance suite and write its result files")
    p.add_argument("--grid-n", type=int, default=None, help="override the per-criterion interval counts")
    p.add_argument("--degree", type=int, choices=(1, 2, 3), default=3)
    p.add_argument("--kkt-tol", type=float, default=None, help="override the KKT tolerance")
    p.add_argument("--only", type=int, action="append", default=None, metavar="N", help="run only criterion N")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="verify-results", help="result directory")

    p = sub.add_parser("mech-info", help="summarize a mechanism")
    p.add_argument("--model", default="mechanism", help="mechanism or a mechanism file path")
    p.add_argument("--temperature", type=float, default=3000.0)
    p.add_argument("--out", default=None, help="also write the normalized mechanism text here")
    return parser


def _positive(name, value):
    if value is not None and not value > 0:
        raise UsageError(f"{name} must be positive, got {value}")


def make_config(args, allow_range: bool) -> RunConfig:
    if not args.fix:
        raise UsageError(FIX_REQUIREMENT)
    gamma = args.gamma if args.gamma is not None else (1.2 if args.model == "davis-skodje" else 1.0)
    t0_default, tf_default = default_horizon(args.model, args.mode)
    t0 = t0_default if args.t0 is None else args.t0
    tf = tf_default if args.tf is None else args.tf
    if not t0 < tf:
        raise UsageError(f"need t0 < tf, got t0={t0}, tf={tf}")
    _positive("--grid-n", args.grid_n)
    _positive("--kkt-tol", args.kkt_tol)
    _positive("--jobs", args.jobs)
    _positive("--max-iter", args.max_iter)
    fixed = [parse_fix(f, allow_range) for f in args.fix]
    tol = args.kkt_tol or (MECHANISM_KKT_TOLERANCE if _is_mechanism(args.model) else 1e-8)
    return RunConfig(args.model, args.mode, gamma, args.lam, t0, tf, args.grid_n or 0, args.degree, fixed,
                     args.temperature, tol, args.max_iter, args.jobs, args.out)


def make_template(cfg: RunConfig):
    model = cfg.build_model()
    names = model.state_names
    idx = []
    for name, _ in cfg.fixed:
        if name not in names:
            raise UsageError(f"unknown state {name!r}; states are {', '.join(names)}")
        idx.append(names.index(name))
    constraint = getattr(model, "conservation", None)
    try:
        tmpl = VariationalProblem(model, cfg.mode, cfg.t0, cfg.tf, idx, [v[0] for _, v in cfg.fixed],
                                  constraint=constraint)
    except ContractViolation as exc:
        raise UsageError(str(exc))
    if not cfg.intervals:
        cfg.intervals = default_intervals(model)
    return model, tmpl


def _config_doc(cfg: RunConfig) -> dict:
    return {
        "model": cfg.model, "mode": cfg.mode, "gamma": cfg.gamma, "lam": cfg.lam,
        "temperature": cfg.temperature if _is_mechanism(cfg.model) else None,
        "t0": cfg.t0, "tf": cfg.tf, "intervals": cfg.intervals, "degree": cfg.degree,
        "fixed": {name: v[0] for name, v in cfg.fixed}, "kkt_tolerance": cfg.kkt_tolerance,
    }


def point_document(cfg: RunConfig, model, result) -> dict:
    names = model.state_names
    report = result.report.summary() if result.report is not None else None
    oracle = None
    if result.oracle_value is not None:
        free = [n for n in names if n not in dict(cfg.fixed)][0]
        oracle = {"variable": free, "value": result.oracle_value, "abs_error": result.oracle_error,
                  "theorem_regime": result.theorem_regime}
    return {
        "schema_version": SCHEMA_VERSION,
        "config": _config_doc(cfg),
        "converged": result.converged,
        "error": result.error,
        "sim_point": dict(zip(names, result.sim_point)),
        "report": report,
        "oracle": oracle,
        "trajectory": {"t": result.node_times, **{n: result.trajectory[:, i] for i, n in enumerate(names)}},
    }


def _emit(text: str, out: Optional[str]):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def cmd_point(args) -> int:
    cfg = make_config(args, allow_range=False)
    model, tmpl = make_template(cfg)
    try:
        result = compute_sim_point(tmpl, cfg.intervals, cfg.degree, cfg.options(), strict=False)
    except ContractViolation as exc:
        # infeasible anchor values are data errors of the request
        raise UsageError(str(exc))
    _emit(json_text(point_document(cfg, model, result)), cfg.out)
    if not result.converged:
        print(f"simfold: solver did not converge: {result.report.message}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg = make_config(args, allow_range=True)
    model, tmpl = make_template(cfg)
    grid = list(itertools.product(*[v for _, v in cfg.fixed]))
    results = compute_manifold_grid(tmpl, grid, cfg.intervals, cfg.degree, cfg.options(), cfg.jobs)
    names = model.state_names
    header = ["index", *[f"{n}_fixed" for n, _ in cfg.fixed], *names, "status", "iterations", "kkt",
              "oracle_error", "errors"]
    rows = []
    for k, (g, r) in enumerate(zip(grid, results)):
        rep = r.report
        kkt = max(rep.stationarity, rep.feasibility, rep.complementarity) if rep else None
        err = r.error or ("" if r.converged else rep.message)
        rows.append([k, *g, *r.sim_point, rep.status if rep else "error", rep.iterations if rep else None,
                     kkt, r.oracle_error, err])
    _emit(table_text(header, rows), cfg.out)
    failed = sum(not r.converged for r in results)
    if failed:
        print(f"simfold: {failed} of {len(results)} grid points did not converge", file=sys.stderr)
    return EXIT_OK if failed == 0 else EXIT_SOLVER


def _write_tables(out_dir: Path, texts: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in texts.items():
        (out_dir / name).write_text(text)


def cmd_figure(args) -> int:
    _positive("--grid-n", args.grid_n)
    _positive("--kkt-tol", args.kkt_tol)
    _positive("--jobs", args.jobs)
    options = None
    if args.kkt_tol is not None:
        options = SolverOptions(kkt_tolerance=args.kkt_tol, acceptable_tolerance=max(1e-6, args.kkt_tol))
    elif args.figure in ("fig5", "fig6"):
        options = SolverOptions(kkt_tolerance=MECHANISM_KKT_TOLERANCE)
    tables = build_figure(args.figure, args.grid_n, args.degree, options, args.jobs)
    _write_tables(Path(args.out), {f"{stem}.csv": table_text(*t) for stem, t in tables.items()})
    failed = 0
    for stem, (header, rows) in tables.items():
        if "status" in header:
            col = header.index("status")
            failed += sum(r[col] != "converged" for r in rows)
    for stem in tables:
        print(os.path.join(args.out, f"{stem}.csv"))
    if failed:
        print(f"simfold: {failed} points did not converge (see the errors column)", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_verify(args) -> int:
    from .acceptance import Settings, determinism_check, run_criteria

    _positive("--grid-n", args.grid_n)
    _positive("--kkt-tol", args.kkt_tol)
    settings = Settings(degree=args.degree, intervals=args.grid_n, jobs=args.jobs)
    if args.kkt_tol is not None:
        settings.kkt_tolerance = args.kkt_tol
    results = run_criteria(settings, only=set(args.only) if args.only else None)
    determinism = determinism_check(Path(args.out), results, settings)
    print(determinism.line())
    ok = all(r.passed for r in results) and determinism.passed is not False
    return EXIT_OK if ok else EXIT_SOLVER


def cmd_mech_info(args) -> int:
    _positive("--temperature", args.temperature)
    try:
        mech = load_mechanism(BUNDLED_MECHANISM if args.model == "mechanism" else args.model)
    except FileNotFoundError:
        raise UsageError(f"no mechanism file at {args.model!r}")
    except MechanismParseError as exc:
        raise UsageError(f"cannot parse mechanism {args.model!r}: {exc}")
    model = mechanism_as_model(mech, args.temperature)
    lines = [f"mechanism: {mech.name or args.model}", f"state unit: {mech.state_unit}",
             f"species ({mech.n_species}): {' '.join(mech.species)}", "element totals:"]
    for el, row, b in zip(mech.element_names, mech.element_matrix, mech.conservation_values):
        lines.append(f"  {el}: {' '.join(str(int(v)) for v in row)} = {float(b)!r}")
    lines.append(f"reactions ({len(mech.reactions)}), k at T = {args.temperature:g} K:")
    for rxn, k in zip(mech.reactions, model.rate_constants):
        lines.append(f"  {rxn.equation():<28s}{' [M]' if rxn.has_third_body else '    '}  k = {k:.6e}")
    lines.append("equilibrium:")
    for name, v in zip(model.state_names, model.equilibrium):
        lines.append(f"  {name:<6s}{v:.12e}")
    print("\n".join(lines))
    if args.out:
        _emit(mech.to_text(), args.out)
    return EXIT_OK


COMMANDS = {"point": cmd_point, "grid": cmd_grid, "figure": cmd_figure, "verify": cmd_verify,
            "mech-info": cmd_mech_info}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"simfold: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ContractViolation as exc:
        print(f"simfold: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BrokenPipeError:
        # reader went away (e.g. piped into head); stop quietly
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
