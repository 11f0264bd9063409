"""CSV tables for re-plotting each figure."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .ipm import SolverOptions
from .kinetics import load_mechanism, mechanism_as_model
from .models import DavisSkodjeModel, LinearModel, ds_sim
from .oracles import LinearOracle, linear_chi
from .problem import FORWARD, REVERSE, VariationalProblem
from .sim import compute_manifold_grid, integrate_trajectory, _conservation_vertices

FIGURES = ("fig1", "fig2", "fig3", "fig4", "fig5", "fig6")
MECHANISM_TEMPERATURE = 3000.0
MECHANISM_H2O_RANGE = (0.0005, 0.018)
RELAXATION_HORIZON = 2e-3
RELAXATION_SEED = 5


def relaxation_times(horizon: float, samples: int = 400) -> np.ndarray:
    # geometric spacing resolves the fast transient and the slow approach alike
    return np.concatenate([[0.0], np.geomspace(horizon * 1e-7, horizon, samples)])


def random_feasible_states(problem: VariationalProblem, count: int, seed: int) -> np.ndarray:
    """Random convex combinations of the vertices of the conservation polytope."""
    verts = np.array(_conservation_vertices(problem))
    weights = np.random.default_rng(seed).dirichlet(np.ones(len(verts)), size=count)
    return weights @ verts


def _status(r) -> str:
    return r.report.status if r.report is not None else "error"


def _point_rows(mode, values, results, oracle=None):
    rows = []
    for k, (v, r) in enumerate(zip(values, results)):
        ref = oracle(v) if oracle else None
        kkt = (max(r.report.stationarity, r.report.feasibility, r.report.complementarity)
               if r.report is not None else None)
        err = r.error or ("" if r.converged else r.report.message)
        rows.append([mode, k, *np.atleast_1d(v), *r.sim_point, _status(r), kkt,
                     ref, r.oracle_error, err])
    return rows


def _trajectory_rows(mode, results):
    rows = []
    for k, r in enumerate(results):
        for t, x in zip(r.node_times, r.trajectory):
            rows.append([mode, k, t, *x])
    return rows


def _test_model_figure(model, fixed_name, values, reverse_t0, forward_tf, sim_curve, intervals, degree,
                       options, jobs):
    names = model.state_names
    j = names.index(fixed_name)
    points, trajs = [], []
    for mode, t0, tf in ((FORWARD, 0.0, forward_tf), (REVERSE, reverse_t0, 0.0)):
        tmpl = VariationalProblem(model, mode, t0, tf, [j], [values[0]])
        res = compute_manifold_grid(tmpl, [[v] for v in values], intervals, degree, options, jobs)
        points += _point_rows(mode, values, res, sim_curve)
        trajs += _trajectory_rows(mode, res)
    other = names[1 - j]
    grid = np.linspace(min(values), max(values), 101)
    return {
        "points": (["mode", "index", f"{fixed_name}_fixed", *names, "status", "kkt",
                    f"{other}_reference", "oracle_error", "errors"], points),
        "trajectories": (["mode", "index", "t", *names], trajs),
        "sim": ([fixed_name, other], [[g, sim_curve(g)] for g in grid]),
    }


def fig1(**_):
    t0s = np.round(np.arange(-10.0, -0.01, 0.25), 10)
    gammas = np.round(np.arange(0.125, 5.0001, 0.125), 10)
    rows = [[t0, g, linear_chi(LinearOracle(g, t0, 0.0, 1.0))] for g in gammas for t0 in t0s]
    return {"chi": (["t0", "gamma", "chi"], rows)}


def _linear(gamma, reverse_t0, intervals, degree, options, jobs):
    return _test_model_figure(LinearModel(gamma), "x2", [0.5, 1.0, 1.5, 2.0], reverse_t0, 10.0,
                              lambda v: v, intervals, degree, options, jobs)


def fig2(intervals=None, degree=3, options=None, jobs=1):
    return _linear(0.2, -21.0, intervals, degree, options, jobs)


def fig3(intervals=None, degree=3, options=None, jobs=1):
    return _linear(1.0, -17.0, intervals, degree, options, jobs)


def fig4(intervals=None, degree=3, options=None, jobs=1):
    values = list(np.round(np.arange(0.2, 2.01, 0.2), 10))
    return _test_model_figure(DavisSkodjeModel(1.2), "x1", values, -8.0, 10.0, ds_sim,
                              intervals, degree, options, jobs)


def _mechanism_template(model, t0, fixed, values):
    return VariationalProblem(model, REVERSE, t0, 0.0, [model.index(s) for s in fixed], values,
                              constraint=model.conservation)


def _relaxation_rows(model, tmpl):
    rows = []
    t = relaxation_times(RELAXATION_HORIZON)
    for k, x0 in enumerate(random_feasible_states(tmpl, 5, RELAXATION_SEED)):
        traj = integrate_trajectory(model, x0, (0.0, RELAXATION_HORIZON), t_eval=t)
        rows += [[k, ti, *xi] for ti, xi in zip(traj.t, traj.x)]
    return rows


def _forward_rows(model, results):
    # SIM points integrated on to equilibrium
    rows = []
    t = relaxation_times(RELAXATION_HORIZON, 100)
    for k, r in enumerate(results):
        if r.converged:
            traj = integrate_trajectory(model, r.sim_point, (0.0, RELAXATION_HORIZON), t_eval=t)
            rows += [[k, ti, *xi] for ti, xi in zip(traj.t, traj.x)]
    return rows


def fig5(intervals=None, degree=3, options=None, jobs=1, samples=15):
    model = mechanism_as_model(load_mechanism(), MECHANISM_TEMPERATURE)
    names = model.state_names
    values = np.linspace(*MECHANISM_H2O_RANGE, samples)
    tmpl = _mechanism_template(model, -4e-4, ["H2O"], [values[0]])
    res = compute_manifold_grid(tmpl, [[v] for v in values], intervals, degree, options, jobs)
    return {
        "points": (["mode", "index", "H2O_fixed", *names, "status", "kkt", "reference", "oracle_error", "errors"],
                   _point_rows(REVERSE, values, res)),
        "trajectories": (["mode", "index", "t", *names], _trajectory_rows(REVERSE, res)),
        "sim_forward": (["index", "t", *names], _forward_rows(model, res)),
        "relaxation": (["trajectory", "t", *names], _relaxation_rows(model, tmpl)),
        "equilibrium": (names, [list(model.equilibrium)]),
    }


FIG6_H2O = (0.002, 0.014)
# H2 = slope * H2O + offset: a sheared grid that follows the 1D manifold; anchors far
# below it are only reachable from the concentration bounds
FIG6_H2_SLOPE = 0.65
FIG6_H2_OFFSET = (0.0015, 0.0095)


def fig6_grid(samples=(5, 5)):
    return [(a, FIG6_H2_SLOPE * a + b) for a in np.linspace(*FIG6_H2O, samples[0])
            for b in np.linspace(*FIG6_H2_OFFSET, samples[1])]


def fig6(intervals=None, degree=3, options=None, jobs=1, samples=(5, 5)):
    model = mechanism_as_model(load_mechanism(), MECHANISM_TEMPERATURE)
    names = model.state_names
    grid = fig6_grid(samples)
    tmpl = _mechanism_template(model, -5e-7, ["H2O", "H2"], list(grid[0]))
    res = compute_manifold_grid(tmpl, grid, intervals, degree, options, jobs)
    return {
        "points": (["mode", "index", "H2O_fixed", "H2_fixed", *names, "status", "kkt", "reference",
                    "oracle_error", "errors"], _point_rows(REVERSE, grid, res)),
        "relaxation": (["trajectory", "t", *names], _relaxation_rows(model, tmpl)),
        "equilibrium": (names, [list(model.equilibrium)]),
    }


def build_figure(name: str, intervals: Optional[int] = None, degree: int = 3,
                 options: Optional[SolverOptions] = None, jobs: int = 1) -> dict:
    """Tables of one figure as ``{stem: (header, rows)}``."""
    if name not in FIGURES:
        raise ValueError(f"unknown figure {name!r}; choose from {', '.join(FIGURES)}")
    fn = globals()[name]
    tables = fn(intervals=intervals, degree=degree, options=options, jobs=jobs)
    return {f"{name}_{stem}": table for stem, table in tables.items()}
