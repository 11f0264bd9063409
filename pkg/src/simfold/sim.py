"""End-to-end SIM computation: initial guesses, single points, grids, diagnostics."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import LinearNDInterpolator
from scipy.optimize import linprog, root

from .collocation import CollocatedNlp, TimeGrid, discretize
from .ipm import SolveReport, SolverOptions, solve
from .models import ContractViolation, DavisSkodjeModel, LinearModel, OdeModel
from .oracles import DsOracle, LinearOracle, OracleError, ds_x2_tf, linear_chi
from .problem import FORWARD, REVERSE, VariationalProblem

log = logging.getLogger(__name__)

TEST_MODEL_INTERVALS = 200
MECHANISM_INTERVALS = 400


class InfeasibleProblem(ContractViolation):
    """Fixed progress values are incompatible with the point constraint and bounds."""


class SimSolveError(RuntimeError):
    """The NLP solver did not converge; ``result`` carries the diagnostics."""

    def __init__(self, result: "SimResult"):
        super().__init__(f"solver {result.report.status}: {result.report.message}")
        self.result = result


class IntegrationError(RuntimeError):
    pass


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray  # (len(t), n)


@dataclass
class SimResult:
    problem: VariationalProblem
    node_times: np.ndarray
    trajectory: np.ndarray
    sim_point: np.ndarray
    report: Optional[SolveReport]
    invariance_defect: Optional[float] = None
    oracle_value: Optional[float] = None
    oracle_error: Optional[float] = None
    theorem_regime: Optional[bool] = None
    error: Optional[str] = None
    seconds: float = 0.0
    intervals: int = 0
    degree: int = 3

    @property
    def converged(self) -> bool:
        return self.error is None and self.report is not None and self.report.converged


def default_intervals(model: OdeModel) -> int:
    return TEST_MODEL_INTERVALS if isinstance(model, (LinearModel, DavisSkodjeModel)) else MECHANISM_INTERVALS


# -- stiff integration ------------------------------------------------------------

def integrate_trajectory(model: OdeModel, x0, t_span, t_eval=None, rtol: float = 1e-10,
                         atol: Optional[float] = None, events=None, dense: bool = False):
    """L-stable adaptive integration (Radau IIA, order 5) with analytic Jacobian."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.dimension,) or not np.all(np.isfinite(x0)):
        raise ContractViolation("initial state must be finite with one entry per state")
    if atol is None:
        atol = rtol * max(1e-4, float(np.max(np.abs(x0))))
    sol = solve_ivp(
        lambda t, x: model.rhs(x), tuple(t_span), x0, method="Radau",
        jac=lambda t, x: model.jacobian(x), rtol=rtol, atol=atol, t_eval=t_eval,
        events=events, dense_output=dense,
    )
    if sol.status < 0:
        raise IntegrationError(sol.message)
    if dense:
        return sol
    return Trajectory(sol.t, sol.y.T.copy())


# -- initial guesses --------------------------------------------------------------

def _anchor_projection(problem: VariationalProblem, fixed_values=None) -> np.ndarray:
    """Equilibrium with the fixed components replaced, corrected onto g = 0."""
    model = problem.model
    x = np.array(model.equilibrium, dtype=float)
    fixed = list(problem.fixed_indices)
    x[fixed] = problem.fixed_values if fixed_values is None else fixed_values
    if problem.constraint is not None:
        free = list(problem.free_indices)
        a = np.atleast_2d(problem.constraint.matrix)
        resid = np.asarray(problem.constraint.target) - a @ x
        x[free] += np.linalg.lstsq(a[:, free], resid, rcond=None)[0]
    return x


def _conservation_vertices(problem: VariationalProblem) -> list[np.ndarray]:
    a = np.atleast_2d(problem.constraint.matrix)
    b = np.asarray(problem.constraint.target, dtype=float)
    n = problem.model.dimension
    lb = 0.0 if problem.lower_bounds is None else np.maximum(problem.lower_bounds, 0.0)
    bounds = [(float(lb) if np.isscalar(lb) else float(lb[i]), None) for i in range(n)]
    out = []
    for i in range(n):
        for sign in (1.0, -1.0):
            cost = np.zeros(n)
            cost[i] = -sign
            res = linprog(cost, A_eq=a, b_eq=b, bounds=bounds, method="highs")
            if res.status == 0 and not any(np.allclose(res.x, v, atol=1e-12) for v in out):
                out.append(res.x)
    return out


def _relaxed_seed_trajectory(problem: VariationalProblem):
    """Trajectory from a conservation vertex that relaxes through the target value.

    For one progress variable the slow manifold is a curve; trajectories from
    extreme compositions reach it after the fast transient and then move along
    it. The trajectory whose crossing of the target value happens latest is
    the most relaxed, and its history up to that crossing is near-optimal.
    """
    idx = problem.fixed_indices[0]
    target = float(problem.fixed_values[0])
    model = problem.model
    horizon = 50.0 * _slow_time(model)
    best = None
    for v in _conservation_vertices(problem):
        if abs(v[idx] - target) <= 1e-14:
            continue

        def hit(t, x):
            return x[idx] - target

        hit.terminal = True
        try:
            sol = integrate_trajectory(model, v, (0.0, horizon), rtol=1e-9, atol=1e-14, events=hit, dense=True)
        except IntegrationError:
            continue
        if len(sol.t_events[0]) and (best is None or sol.t_events[0][0] > best[0]):
            best = (float(sol.t_events[0][0]), sol, v)
    return best


def _slow_time(model: OdeModel) -> float:
    eig = np.abs(np.linalg.eigvals(model.jacobian(model.equilibrium)).real)
    eig = eig[eig > 1e-8 * max(eig.max(initial=0.0), 1e-300)]
    return 1.0 / eig.min() if eig.size else 1.0


def _fast_time(model: OdeModel, k: int) -> float:
    # relaxation time of the slowest mode that is not part of a k-dimensional SIM
    eig = np.sort(np.abs(np.linalg.eigvals(model.jacobian(model.equilibrium)).real))
    eig = eig[eig > 1e-8 * max(eig.max(initial=0.0), 1e-300)]
    return 1.0 / eig[min(k, len(eig) - 1)] if eig.size else 1.0


def _relaxed_anchor(problem: VariationalProblem) -> np.ndarray:
    """Point near the SIM whose fixed components match: relax and correct."""
    model = problem.model
    tau = 20.0 * _fast_time(model, len(problem.fixed_indices))
    fixed = list(problem.fixed_indices)
    target = np.asarray(problem.fixed_values, dtype=float)

    def relax(values):
        x = _anchor_projection(problem, values)
        return integrate_trajectory(model, x, (0.0, tau), rtol=1e-9, atol=1e-14).x[-1]

    try:
        sol = root(lambda v: relax(v)[fixed] - target, target, method="hybr", options={"xtol": 1e-10})
        if sol.success:
            return relax(sol.x)
    except (IntegrationError, ValueError, FloatingPointError):
        pass
    return _anchor_projection(problem)


def initial_guess(problem: VariationalProblem, nlp: CollocatedNlp) -> np.ndarray:
    model = problem.model
    t = nlp.node_times
    if problem.mode == FORWARD:
        # a true trajectory from the projected anchor point
        x0 = _anchor_projection(problem)
        traj = integrate_trajectory(model, x0, (problem.t0, problem.tf), t_eval=t, rtol=1e-8)
        if len(traj.t) == len(t):
            return nlp.pack(traj.x)
        return nlp.pack(np.tile(x0, (len(t), 1)))
    if problem.constraint is not None:
        if len(problem.fixed_indices) == 1:
            seed = _relaxed_seed_trajectory(problem)
            if seed is not None:
                t_hit, sol, start = seed
                s = t_hit + (t - problem.tf)
                states = np.where((s >= 0)[:, None], sol.sol(np.maximum(s, 0.0)).T, start[None, :])
                states[-1, list(problem.fixed_indices)] = problem.fixed_values
                return nlp.pack(states)
        return nlp.pack(np.tile(_relaxed_anchor(problem), (len(t), 1)))
    # unconstrained test models: fixed components decay at the slow rate,
    # free components sit at equilibrium
    rate = 1.0 / _slow_time(model)
    states = np.tile(np.asarray(model.equilibrium, dtype=float), (len(t), 1))
    decay = np.exp(-rate * (t - problem.tf))
    for j, v in zip(problem.fixed_indices, problem.fixed_values):
        states[:, j] = model.equilibrium[j] + (v - model.equilibrium[j]) * decay
    return nlp.pack(states)


# -- feasibility and oracles -------------------------------------------------------

def check_feasible(problem: VariationalProblem) -> None:
    """Raise :class:`InfeasibleProblem` if no state meets the anchor conditions."""
    if problem.constraint is None:
        return
    n = problem.model.dimension
    a = np.atleast_2d(problem.constraint.matrix)
    b = np.asarray(problem.constraint.target, dtype=float)
    rows = [a]
    rhs = [b]
    sel = np.zeros((len(problem.fixed_indices), n))
    sel[np.arange(len(problem.fixed_indices)), list(problem.fixed_indices)] = 1.0
    rows.append(sel)
    rhs.append(problem.fixed_values)
    lb = problem.lower_bounds
    bounds = [(None if lb is None else float(lb[i]), None) for i in range(n)]
    res = linprog(np.zeros(n), A_eq=np.vstack(rows), b_eq=np.concatenate(rhs), bounds=bounds, method="highs")
    if res.status != 0:
        raise InfeasibleProblem(
            f"fixed values {list(problem.fixed_values)} admit no state satisfying the point constraint and bounds")


def oracle_value(problem: VariationalProblem):
    """Analytic SIM-point value of the free coordinate, when an oracle applies.

    Returns ``(free_index, value, theorem_regime)`` or None.
    """
    model = problem.model
    if problem.mode != REVERSE or len(problem.fixed_indices) != 1:
        return None
    j = problem.fixed_indices[0]
    v = float(problem.fixed_values[0])
    if isinstance(model, LinearModel) and model.lam == 1.0:
        chi = linear_chi(LinearOracle(model.gamma, problem.t0, problem.tf, 1.0))
        # the model is symmetric under swapping x1 and x2
        return 1 - j, v * (1.0 + chi), True
    if isinstance(model, DavisSkodjeModel) and j == 0 and v > 0:
        try:
            o = DsOracle(model.gamma, problem.t0, problem.tf, v)
            return 1, ds_x2_tf(o), o.theorem_regime
        except OracleError:
            return None
    return None


# -- drivers ----------------------------------------------------------------------

def compute_sim_point(problem: VariationalProblem, intervals: Optional[int] = None, degree: int = 3,
                      options: Optional[SolverOptions] = None, guess=None, strict: bool = True) -> SimResult:
    """Solve one variational problem; the SIM point is the state at the anchor time.

    With ``strict`` a non-converged solve raises :class:`SimSolveError`
    carrying the full result, otherwise the result is returned with the
    report's failure status.
    """
    check_feasible(problem)
    intervals = intervals or default_intervals(problem.model)
    start = time.perf_counter()
    nlp = discretize(problem, TimeGrid.uniform(problem.t0, problem.tf, intervals), degree)
    z0 = initial_guess(problem, nlp) if guess is None else np.asarray(guess, dtype=float)
    z, report = solve(nlp, z0, options)
    states = nlp.states(z).copy()
    point = states[nlp.anchor_node].copy()
    result = SimResult(problem, nlp.node_times.copy(), states, point, report,
                       seconds=time.perf_counter() - start, intervals=intervals, degree=degree)
    ref = oracle_value(problem)
    if ref is not None:
        k, value, regime = ref
        result.oracle_value = float(value)
        result.oracle_error = float(abs(point[k] - value))
        result.theorem_regime = regime
    log.info("sim point %s: %s in %d iterations (%.2fs)", list(problem.fixed_values), report.status,
             report.iterations, result.seconds)
    if strict and not report.converged:
        raise SimSolveError(result)
    return result


def _grid_worker(args):
    problem, intervals, degree, options = args
    try:
        return compute_sim_point(problem, intervals, degree, options, strict=False)
    except Exception as exc:  # recorded per point; the sweep continues
        empty = np.full(problem.model.dimension, np.nan)
        return SimResult(problem, np.zeros(0), np.zeros((0, problem.model.dimension)), empty, None,
                         error=f"{type(exc).__name__}: {exc}", intervals=intervals or 0, degree=degree)


def compute_manifold_grid(template: VariationalProblem, progress_grid: Sequence[Sequence[float]],
                          intervals: Optional[int] = None, degree: int = 3,
                          options: Optional[SolverOptions] = None, jobs: int = 1) -> list[SimResult]:
    """One SIM point per progress tuple, in grid order; failures are recorded, not raised."""
    k = len(template.fixed_indices)
    problems = []
    for values in progress_grid:
        values = np.atleast_1d(np.asarray(values, dtype=float))
        if len(values) != k:
            raise ContractViolation(f"progress tuple {tuple(values)} has arity {len(values)}, expected {k}")
        problems.append(replace(template, fixed_values=values))
    tasks = [(p, intervals, degree, options) for p in problems]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_grid_worker, tasks))
    return [_grid_worker(t) for t in tasks]


# -- diagnostics ------------------------------------------------------------------

def invariance_defect(model: OdeModel, sim_points, horizon: float, progress_indices: Sequence[int],
                      samples: int = 200) -> float:
    """Largest distance of trajectories from the sampled manifold.

    Each SIM point is integrated over ``horizon``. Along the trajectory the
    free coordinates are compared with the piecewise-linear interpolant of the
    sampled manifold at the same progress values; samples whose progress
    values leave the sampled range are skipped.
    """
    pts = np.asarray(sim_points, dtype=float)
    if pts.ndim != 2 or len(pts) < 2:
        raise ContractViolation("need at least two SIM points")
    if not horizon > 0:
        raise ContractViolation("horizon must be positive")
    prog = list(progress_indices)
    free = [i for i in range(model.dimension) if i not in prog]
    manifold = _manifold_interpolant(pts[:, prog], pts[:, free])
    t_eval = np.linspace(0.0, horizon, samples)
    worst = 0.0
    for p in pts:
        traj = integrate_trajectory(model, p, (0.0, horizon), t_eval=t_eval)
        ref = manifold(traj.x[:, prog])
        ok = np.all(np.isfinite(ref), axis=1)
        if ok.any():
            dist = np.linalg.norm(traj.x[ok][:, free] - ref[ok], axis=1)
            worst = max(worst, float(dist.max()))
    return worst


def _manifold_interpolant(progress, free):
    if progress.shape[1] == 1:
        order = np.argsort(progress[:, 0])
        xp = progress[order, 0]
        fp = free[order]

        def interp(q):
            q = np.asarray(q)[:, 0]
            out = np.column_stack([np.interp(q, xp, fp[:, j]) for j in range(fp.shape[1])])
            out[(q < xp[0]) | (q > xp[-1])] = np.nan
            return out

        return interp
    lin = LinearNDInterpolator(progress, free)
    return lambda q: np.atleast_2d(lin(q))


def manifold_distance(points_on_manifold, x, scale=None) -> float:
    """Euclidean distance of ``x`` from the polyline through the manifold points.

    Points are joined in the given order. With ``scale`` the distance is
    divided by it.
    """
    m = np.asarray(points_on_manifold, dtype=float)
    x = np.asarray(x, dtype=float)
    best = math.inf
    for a, b in zip(m[:-1], m[1:]):
        d = b - a
        denom = float(d @ d)
        s = 0.0 if denom == 0 else min(1.0, max(0.0, float((x - a) @ d) / denom))
        best = min(best, float(np.linalg.norm(x - (a + s * d))))
    return best / scale if scale else best
