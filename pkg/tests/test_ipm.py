import numpy as np
import pytest
from scipy import sparse

from simfold.collocation import NlpEvaluationError
from simfold.ipm import CONVERGED, DIVERGED, MAX_ITER, SolverOptions, kkt_residuals, solve
from simfold.models import ContractViolation


class QuadNlp:
    """min 1/2 z'Qz + q'z  s.t.  A z = b,  lower <= z <= upper."""

    def __init__(self, q_mat, q, a, b, lower=None, upper=None):
        self.q_mat, self.q, self.a, self.b = map(np.asarray, (q_mat, q, a, b))
        self.n_vars = len(q)
        self.n_constraints = len(b)
        self.lower = np.full(self.n_vars, -np.inf) if lower is None else np.asarray(lower, float)
        self.upper = np.full(self.n_vars, np.inf) if upper is None else np.asarray(upper, float)

    def objective(self, z):
        return 0.5 * z @ self.q_mat @ z + self.q @ z

    def gradient(self, z):
        return self.q_mat @ z + self.q

    def constraints(self, z):
        return self.a @ z - self.b

    def jacobian(self, z):
        return sparse.csr_matrix(self.a)

    def hessian(self, z, multipliers, obj_factor=1.0):
        return sparse.csr_matrix(obj_factor * self.q_mat)


class CircleNlp:
    """min x + y  s.t.  x^2 + y^2 = 2  (solution (-1, -1))."""

    n_vars, n_constraints = 2, 1
    lower = np.full(2, -np.inf)
    upper = np.full(2, np.inf)

    def objective(self, z):
        return z[0] + z[1]

    def gradient(self, z):
        return np.ones(2)

    def constraints(self, z):
        return np.array([z @ z - 2.0])

    def jacobian(self, z):
        return sparse.csr_matrix(2.0 * z[None, :])

    def hessian(self, z, multipliers, obj_factor=1.0):
        return sparse.csr_matrix(2.0 * multipliers[0] * np.eye(2))


def test_equality_qp_closed_form():
    q_mat = np.diag([2.0, 4.0, 1.0])
    q = np.array([-1.0, 0.5, 0.0])
    a = np.array([[1.0, 1.0, 1.0]])
    nlp = QuadNlp(q_mat, q, a, [1.0])
    z, rep = solve(nlp, np.zeros(3))
    kkt = np.block([[q_mat, a.T], [a, np.zeros((1, 1))]])
    expected = np.linalg.solve(kkt, np.concatenate([-q, [1.0]]))[:3]
    assert rep.status == CONVERGED
    np.testing.assert_allclose(z, expected, atol=1e-8)


def test_active_bound():
    # unconstrained minimum at (2, -1) violates y >= 0
    nlp = QuadNlp(np.eye(2), [-2.0, 1.0], np.zeros((0, 2)), np.zeros(0), lower=[-np.inf, 0.0])
    z, rep = solve(nlp, np.array([0.0, 1.0]))
    assert rep.converged
    np.testing.assert_allclose(z, [2.0, 0.0], atol=1e-7)
    assert rep.multipliers.lower[1] == pytest.approx(1.0, abs=1e-6)


def test_upper_bound_and_equality():
    nlp = QuadNlp(np.eye(2), [0.0, 0.0], [[1.0, 1.0]], [3.0], upper=[1.0, np.inf])
    z, rep = solve(nlp, np.array([0.5, 0.5]))
    assert rep.converged
    np.testing.assert_allclose(z, [1.0, 2.0], atol=1e-7)


def test_nonconvex_equality_needs_inertia_control():
    z, rep = solve(CircleNlp(), np.array([1.0, 0.2]))
    assert rep.converged
    np.testing.assert_allclose(z, [-1.0, -1.0], atol=1e-7)


def test_converged_report_meets_tolerance():
    nlp = QuadNlp(np.diag([1.0, 3.0]), [1.0, 1.0], [[1.0, -1.0]], [0.5], lower=[0.0, -np.inf])
    opts = SolverOptions(kkt_tolerance=1e-10)
    z, rep = solve(nlp, np.array([1.0, 0.0]), opts)
    assert rep.status == CONVERGED
    assert max(rep.stationarity, rep.feasibility, rep.complementarity) <= 1e-10
    res = kkt_residuals(nlp, z, rep.multipliers, rep.objective_scale)
    assert res.overall <= 1e-9


def test_iteration_limit():
    z, rep = solve(CircleNlp(), np.array([1.0, 0.2]), SolverOptions(max_iterations=1))
    assert rep.status == MAX_ITER
    assert not rep.converged


class Exploding(CircleNlp):
    def constraints(self, z):
        raise NlpEvaluationError("constraints", 0)


def test_nonfinite_evaluation_is_diverged():
    _, rep = solve(Exploding(), np.array([1.0, 0.2]))
    assert rep.status == DIVERGED


@pytest.mark.parametrize("kw", [dict(kkt_tolerance=0), dict(kkt_tolerance=2.0), dict(max_iterations=0),
                                dict(backtrack=1.5), dict(acceptable_iterations=0)])
def test_option_contracts(kw):
    with pytest.raises(ContractViolation):
        SolverOptions(**kw)
