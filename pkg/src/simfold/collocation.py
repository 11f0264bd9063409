"""Radau collocation of the variational problem into a sparse NLP.

Layout: the trajectory is stored node by node. Node 0 is ``t0``; node
``k*s + j`` (``j = 1..s``) is the ``j``-th Radau point of interval ``k``.
The last Radau point of every interval is ``tau = 1``, so interval ``k+1``
starts from node ``(k+1)*s`` and continuity is exact by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.polynomial import legendre as leg
from numpy.polynomial import polynomial as poly
from scipy import sparse

from .models import ContractViolation, curvature_derivatives
from .problem import FORWARD, VariationalProblem

SUPPORTED_DEGREES = (1, 2, 3)


class NlpEvaluationError(FloatingPointError):
    """Non-finite value produced while evaluating the NLP."""

    def __init__(self, what: str, index: int):
        super().__init__(f"non-finite {what} at index {index}")
        self.what = what
        self.index = index


@dataclass(frozen=True)
class RadauCoefficients:
    """Radau IIA data on the unit interval.

    ``diff_matrix[j, l]`` is the derivative at ``nodes[j]`` of the Lagrange
    basis polynomial attached to ``(0, *nodes)[l]``.
    """

    degree: int
    nodes: np.ndarray
    weights: np.ndarray
    diff_matrix: np.ndarray


def radau_coefficients(degree: int) -> RadauCoefficients:
    if degree not in SUPPORTED_DEGREES:
        raise ContractViolation(f"collocation degree must be one of {SUPPORTED_DEGREES}, got {degree}")
    s = degree
    if s == 1:
        nodes = np.array([1.0])
    else:
        # Radau IIA abscissae: roots of P_s - P_{s-1} mapped from [-1, 1]
        coef = np.zeros(s + 1)
        coef[s] = 1.0
        coef[s - 1] = -1.0
        roots = np.sort(leg.legroots(coef).real)
        nodes = (roots + 1.0) / 2.0
        nodes[-1] = 1.0
    points = np.concatenate([[0.0], nodes])
    weights = np.empty(s)
    diff = np.empty((s, s + 1))
    for l in range(s + 1):
        others = np.delete(points, l)
        basis = poly.polyfromroots(others) / np.prod(points[l] - others)
        diff[:, l] = poly.polyval(nodes, poly.polyder(basis))
    # quadrature weights come from the interpolant through the s nodes only
    for l in range(s):
        others = np.delete(nodes, l)
        basis = poly.polyfromroots(others) / np.prod(nodes[l] - others) if s > 1 else np.ones(1)
        antider = poly.polyint(basis)
        weights[l] = poly.polyval(1.0, antider) - poly.polyval(0.0, antider)
    return RadauCoefficients(degree=s, nodes=nodes, weights=weights, diff_matrix=diff)


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    tf: float
    node_times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.node_times, dtype=float)
        if not self.t0 < self.tf:
            raise ContractViolation("time grid needs t0 < tf")
        if len(t) < 2 or t[0] != self.t0 or t[-1] != self.tf or np.any(np.diff(t) <= 0):
            raise ContractViolation("grid nodes must increase strictly from t0 to tf")

    @classmethod
    def uniform(cls, t0: float, tf: float, intervals: int) -> "TimeGrid":
        if intervals < 1:
            raise ContractViolation("need at least one interval")
        t = np.linspace(t0, tf, intervals + 1)
        t[0], t[-1] = t0, tf
        return cls(float(t0), float(tf), t)

    @property
    def intervals(self) -> int:
        return len(self.node_times) - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.node_times)


class CollocatedNlp:
    """Discretized variational problem.

    Variables are all states at all nodes; equality constraints are the
    collocation residuals (scaled by the step, ``D x - h f(x)``), the fixed
    progress variables and the anchor point constraint.
    """

    def __init__(self, problem: VariationalProblem, grid: TimeGrid, degree: int = 3):
        if not (np.isclose(grid.t0, problem.t0) and np.isclose(grid.tf, problem.tf)):
            raise ContractViolation("grid horizon does not match the problem horizon")
        self.problem = problem
        self.model = problem.model
        self.grid = grid
        self.coefficients = radau_coefficients(degree)
        self.degree = degree

        n = self.model.dimension
        s = degree
        big_n = grid.intervals
        self.n_states = n
        self.n_nodes = big_n * s + 1
        self.n_vars = n * self.n_nodes
        h = grid.steps
        self._step = np.repeat(h, s)  # per collocation node
        self._quad = self._step * np.tile(self.coefficients.weights, big_n)
        self.node_times = np.concatenate(
            [[grid.t0], (grid.node_times[:-1, None] + h[:, None] * self.coefficients.nodes[None, :]).ravel()]
        )
        self.node_times[-1] = grid.tf
        self.anchor_node = 0 if problem.mode == FORWARD else self.n_nodes - 1
        # interval -> node indices (start + s Radau points)
        self._interval_nodes = np.arange(big_n)[:, None] * s + np.arange(s + 1)[None, :]

        self.fixed_indices = np.asarray(problem.fixed_indices, dtype=int)
        self.fixed_values = np.asarray(problem.fixed_values, dtype=float)
        if problem.constraint is not None:
            self.g_matrix = np.atleast_2d(np.asarray(problem.constraint.matrix, dtype=float))
            self.g_target = np.asarray(problem.constraint.target, dtype=float).reshape(-1)
            if self.g_matrix.shape != (len(self.g_target), n):
                raise ContractViolation("constraint matrix shape does not match state dimension")
        else:
            self.g_matrix = np.zeros((0, n))
            self.g_target = np.zeros(0)

        self.n_dynamics = big_n * s * n
        self.n_constraints = self.n_dynamics + len(self.fixed_indices) + len(self.g_target)

        self.lower = np.full(self.n_vars, -np.inf)
        self.upper = np.full(self.n_vars, np.inf)
        if problem.lower_bounds is not None:
            self.lower[:] = np.tile(problem.lower_bounds, self.n_nodes)
        self._build_patterns()

    # -- layout -----------------------------------------------------------
    def index(self, node: int, state: int) -> int:
        return node * self.n_states + state

    def states(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float).reshape(self.n_nodes, self.n_states)

    def anchor_state(self, z) -> np.ndarray:
        return self.states(z)[self.anchor_node].copy()

    @property
    def degrees_of_freedom(self) -> int:
        rank = np.linalg.matrix_rank(self.g_matrix) if len(self.g_target) else 0
        return self.n_states - len(self.fixed_indices) - rank

    # -- sparsity ---------------------------------------------------------
    def _build_patterns(self):
        n, s = self.n_states, self.degree
        big_n = self.grid.intervals
        d = self.coefficients.diff_matrix
        k, j, l, i = np.meshgrid(np.arange(big_n), np.arange(s), np.arange(s + 1), np.arange(n), indexing="ij")
        d_rows = ((k * s + j) * n + i).ravel()
        d_cols = (self._interval_nodes[k, l] * n + i).ravel()
        self._d_vals = np.broadcast_to(d[None, :, :, None], k.shape).ravel().copy()
        g, i2, a2 = np.meshgrid(np.arange(big_n * s), np.arange(n), np.arange(n), indexing="ij")
        j_rows = (g * n + i2).ravel()
        j_cols = ((g + 1) * n + a2).ravel()
        anchor = self.anchor_node * n
        nf = len(self.fixed_indices)
        f_rows = self.n_dynamics + np.arange(nf)
        f_cols = anchor + self.fixed_indices
        ng = len(self.g_target)
        gr, ga = np.meshgrid(np.arange(ng), np.arange(n), indexing="ij")
        g_rows = (self.n_dynamics + nf + gr).ravel()
        g_cols = (anchor + ga).ravel()
        self._g_vals = self.g_matrix.ravel().copy()
        self._jac_rows = np.concatenate([d_rows, j_rows, f_rows, g_rows])
        self._jac_cols = np.concatenate([d_cols, j_cols, f_cols, g_cols])
        self._n_d = len(d_rows)
        self._n_j = len(j_rows)
        # Lagrangian Hessian: one dense n x n block per collocation node
        g, a, b = np.meshgrid(np.arange(1, self.n_nodes), np.arange(n), np.arange(n), indexing="ij")
        self._hess_rows = (g * n + a).ravel()
        self._hess_cols = (g * n + b).ravel()

    @property
    def jacobian_sparsity(self) -> set[tuple[int, int]]:
        return set(zip(self._jac_rows.tolist(), self._jac_cols.tolist()))

    # -- evaluation -------------------------------------------------------
    def _colloc_states(self, z):
        x = self.states(z)
        if not np.all(np.isfinite(x)):
            raise NlpEvaluationError("variable", int(np.flatnonzero(~np.isfinite(x.ravel()))[0]))
        return x

    def objective(self, z) -> float:
        x = self._colloc_states(z)
        phi = curvature_derivatives(self.model, x[1:], order=1)[0]
        return float(_checked(phi, "objective term") @ self._quad)

    def gradient(self, z) -> np.ndarray:
        x = self._colloc_states(z)
        _, grad = curvature_derivatives(self.model, x[1:], order=1)
        out = np.zeros((self.n_nodes, self.n_states))
        out[1:] = grad * self._quad[:, None]
        return _checked(out.ravel(), "objective gradient")

    def constraints(self, z) -> np.ndarray:
        x = self._colloc_states(z)
        f = self.model.rhs(x[1:])
        big_n, s, n = self.grid.intervals, self.degree, self.n_states
        dyn = np.einsum("jl,kln->kjn", self.coefficients.diff_matrix, x[self._interval_nodes])
        dyn = dyn.reshape(big_n * s, n) - self._step[:, None] * f
        anchor = x[self.anchor_node]
        fixed = anchor[self.fixed_indices] - self.fixed_values
        g = self.g_matrix @ anchor - self.g_target
        return _checked(np.concatenate([dyn.ravel(), fixed, g]), "constraint")

    def jacobian(self, z) -> sparse.csr_matrix:
        x = self._colloc_states(z)
        jac = self.model.jacobian(x[1:])
        vals = np.concatenate(
            [
                self._d_vals,
                (-self._step[:, None, None] * jac).ravel(),
                np.ones(len(self.fixed_indices)),
                self._g_vals,
            ]
        )
        _checked(vals, "constraint Jacobian entry")
        return sparse.csr_matrix(
            (vals, (self._jac_rows, self._jac_cols)), shape=(self.n_constraints, self.n_vars)
        )

    def hessian(self, z, multipliers, obj_factor: float = 1.0) -> sparse.csr_matrix:
        """Hessian of ``obj_factor * objective + multipliers @ constraints``."""
        x = self._colloc_states(z)
        lam = np.asarray(multipliers, dtype=float)[: self.n_dynamics].reshape(-1, self.n_states)
        _, _, hobj = curvature_derivatives(self.model, x[1:], order=2)
        tens = self.model.hessian(x[1:])
        blocks = obj_factor * self._quad[:, None, None] * hobj
        blocks -= self._step[:, None, None] * np.einsum("gi,giab->gab", lam, tens)
        _checked(blocks, "Hessian entry")
        return sparse.csr_matrix(
            (blocks.ravel(), (self._hess_rows, self._hess_cols)), shape=(self.n_vars, self.n_vars)
        )

    def pack(self, states) -> np.ndarray:
        return np.asarray(states, dtype=float).reshape(self.n_nodes, self.n_states).ravel().copy()


def _checked(arr, what):
    arr = np.asarray(arr)
    bad = ~np.isfinite(arr)
    if np.any(bad):
        raise NlpEvaluationError(what, int(np.flatnonzero(bad.ravel())[0]))
    return arr


def discretize(problem: VariationalProblem, grid: TimeGrid, degree: int = 3) -> CollocatedNlp:
    """Build the collocated NLP; only endpoint anchor times are supported."""
    return CollocatedNlp(problem, grid, degree)


def evaluate_nlp(nlp: CollocatedNlp, z):
    """Return ``(objective, constraints, gradient, constraint_jacobian)`` at ``z``."""
    z = np.asarray(z, dtype=float)
    if z.shape != (nlp.n_vars,):
        raise ContractViolation(f"variable vector has shape {z.shape}, expected ({nlp.n_vars},)")
    return nlp.objective(z), nlp.constraints(z), nlp.gradient(z), nlp.jacobian(z)


def interpolate(nlp: CollocatedNlp, z, t) -> np.ndarray:
    """Evaluate the piecewise collocation polynomial at times ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    x = nlp.states(z)
    edges = nlp.grid.node_times
    k = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, nlp.grid.intervals - 1)
    tau = (t - edges[k]) / nlp.grid.steps[k]
    points = np.concatenate([[0.0], nlp.coefficients.nodes])
    basis = np.ones((len(t), len(points)))
    for l in range(len(points)):
        for m in range(len(points)):
            if m != l:
                basis[:, l] *= (tau - points[m]) / (points[l] - points[m])
    return np.einsum("tl,tln->tn", basis, x[nlp._interval_nodes[k]])
