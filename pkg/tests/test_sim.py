import numpy as np
import pytest

from simfold.ipm import SolverOptions
from simfold.models import ContractViolation, DavisSkodjeModel, LinearModel, ds_sim, linear_analytic_solution
from simfold.problem import FORWARD, REVERSE, LinearConstraint, VariationalProblem
from simfold.sim import (
    InfeasibleProblem,
    SimSolveError,
    compute_manifold_grid,
    compute_sim_point,
    integrate_trajectory,
    invariance_defect,
    manifold_distance,
    oracle_value,
)


def test_integrate_matches_analytic():
    model = LinearModel(3.0)
    t = np.linspace(0, 2, 11)
    traj = integrate_trajectory(model, np.array([1.0, 0.0]), (0, 2), t_eval=t)
    np.testing.assert_allclose(traj.x, linear_analytic_solution(model, 0.5, 0.5, t), rtol=1e-7, atol=1e-10)
    with pytest.raises(ContractViolation):
        integrate_trajectory(model, np.array([np.nan, 0.0]), (0, 1))


def test_linear_reverse_point_matches_oracle():
    p = VariationalProblem(LinearModel(1.0), REVERSE, -6.0, 0.0, [1], [1.5])
    r = compute_sim_point(p, 100, 3)
    assert r.converged
    assert r.oracle_error <= 1e-8
    assert r.sim_point[1] == 1.5  # fixed coordinate held exactly
    assert r.trajectory.shape == (301, 2)


def test_oracle_uses_swap_symmetry():
    p = VariationalProblem(LinearModel(1.0), REVERSE, -6.0, 0.0, [0], [1.5])
    k, v, regime = oracle_value(p)
    assert k == 1 and regime
    r = compute_sim_point(p, 100, 3)
    assert abs(r.sim_point[1] - v) <= 1e-8


def test_ds_reverse_point():
    p = VariationalProblem(DavisSkodjeModel(1.2), REVERSE, -8.0, 0.0, [0], [1.0])
    r = compute_sim_point(p, 200, 3)
    assert r.converged and abs(r.sim_point[1] - ds_sim(1.0)) < 1e-4
    assert r.oracle_error < 1e-8 and not r.theorem_regime


def test_forward_mode_converges():
    p = VariationalProblem(DavisSkodjeModel(1.2), FORWARD, 0.0, 10.0, [0], [1.0])
    r = compute_sim_point(p, 200, 3)
    assert r.converged
    assert r.sim_point[0] == 1.0
    assert r.oracle_value is None
    # forward mode sits off the manifold by more than reverse mode does
    assert abs(r.sim_point[1] - ds_sim(1.0)) > 1e-4


def test_strict_raises_with_result():
    p = VariationalProblem(DavisSkodjeModel(1.2), FORWARD, 0.0, 10.0, [0], [1.0])
    with pytest.raises(SimSolveError) as info:
        compute_sim_point(p, 50, 3, SolverOptions(max_iterations=1))
    assert not info.value.result.converged


def test_infeasible_anchor():
    model = LinearModel(1.0)
    p = VariationalProblem(model, REVERSE, -1.0, 0.0, [0], [2.0],
                           constraint=LinearConstraint(np.array([[1.0, 1.0]]), np.array([1.0])),
                           lower_bounds=np.zeros(2))
    with pytest.raises(InfeasibleProblem):
        compute_sim_point(p, 10)


def test_grid_records_failures_in_order():
    model = LinearModel(1.0)
    tmpl = VariationalProblem(model, REVERSE, -5.0, 0.0, [0], [0.5],
                              constraint=LinearConstraint(np.array([[1.0, 1.0]]), np.array([1.0])),
                              lower_bounds=np.array([-1e6, 0.0]))
    # the constraint pins both coordinates, so 2.0 is infeasible under the bounds
    res = compute_manifold_grid(tmpl, [[0.25], [2.0], [0.4]], 20)
    assert [r.error is None for r in res] == [True, False, True]
    assert "InfeasibleProblem" in res[1].error
    assert res[0].converged and res[2].converged
    np.testing.assert_allclose(res[2].sim_point, [0.4, 0.6])
    with pytest.raises(ContractViolation):
        compute_manifold_grid(tmpl, [[0.1, 0.2]], 20)


def test_grid_jobs_do_not_change_results():
    tmpl = VariationalProblem(LinearModel(0.5), REVERSE, -5.0, 0.0, [1], [1.0])
    grid = [[0.5], [1.0], [1.5]]
    a = compute_manifold_grid(tmpl, grid, 40, 2, jobs=1)
    b = compute_manifold_grid(tmpl, grid, 40, 2, jobs=2)
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra.sim_point, rb.sim_point)


def test_invariance_defect_exact_manifold_is_small():
    model = DavisSkodjeModel(1.5)
    x1 = np.linspace(0.2, 3.0, 60)
    pts = np.column_stack([x1, ds_sim(x1)])
    assert invariance_defect(model, pts, 1.0, [0]) < 1e-3
    shifted = pts + np.array([0.0, 0.05])
    assert invariance_defect(model, shifted, 1.0, [0]) > 1e-2
    with pytest.raises(ContractViolation):
        invariance_defect(model, pts[:1], 1.0, [0])


def test_manifold_distance():
    line = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    assert manifold_distance(line, np.array([0.5, 0.3])) == pytest.approx(0.3)
    assert manifold_distance(line, np.array([2.0, 0.5]), scale=2.0) == pytest.approx(0.5)
