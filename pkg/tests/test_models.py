import numpy as np
import pytest

from simfold.models import (
    ContractViolation,
    DavisSkodjeModel,
    LinearModel,
    SingularityError,
    curvature_criterion,
    curvature_derivatives,
    ds_analytic_solution,
    ds_sim,
    linear_analytic_solution,
)


def fd(fun, x, h=1e-6):
    cols = []
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h * max(1.0, abs(x[i]))
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * e[i]))
    return np.stack(cols, axis=-1)


MODELS = [LinearModel(0.2), LinearModel(3.0, lam=0.5), DavisSkodjeModel(1.2), DavisSkodjeModel(4.0)]


def _state(model, rng):
    if isinstance(model, DavisSkodjeModel):
        return np.array([rng.uniform(0.1, 3.0), rng.uniform(-1.0, 1.0)])
    return rng.uniform(-2, 2, 2)


@pytest.mark.parametrize("model", MODELS, ids=repr)
def test_derivative_tensors_match_finite_differences(model, rng):
    for _ in range(5):
        x = _state(model, rng)
        np.testing.assert_allclose(model.jacobian(x), fd(model.rhs, x), rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(model.hessian(x), fd(model.jacobian, x), rtol=1e-6, atol=1e-7)
        np.testing.assert_allclose(model.third_derivative(x), fd(model.hessian, x), rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("model", MODELS, ids=repr)
def test_curvature_gradient_and_hessian(model, rng):
    x = _state(model, rng)
    phi, grad, hess = curvature_derivatives(model, x)
    assert phi == pytest.approx(curvature_criterion(model, x))
    np.testing.assert_allclose(grad, fd(lambda y: curvature_criterion(model, y), x), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(hess, fd(lambda y: curvature_derivatives(model, y, 1)[1], x), rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(hess, hess.T, atol=1e-12)


def test_batched_evaluation_matches_pointwise(rng):
    model = DavisSkodjeModel(1.5)
    xs = np.column_stack([rng.uniform(0.1, 2, 7), rng.uniform(-1, 1, 7)])
    np.testing.assert_allclose(model.rhs(xs), [model.rhs(x) for x in xs])
    np.testing.assert_allclose(curvature_criterion(model, xs), [curvature_criterion(model, x) for x in xs])


def test_linear_slow_direction_is_bisectrix():
    model = LinearModel(2.0, lam=0.7)
    w, v = np.linalg.eig(model.matrix_a)
    slow = v[:, np.argmax(w.real)]
    assert abs(slow[0] - slow[1]) < 1e-12 * abs(slow[0]) * 10
    np.testing.assert_allclose(sorted(w.real), [-2.7, -0.7])


@pytest.mark.parametrize("model,solution,consts", [
    (LinearModel(0.4), linear_analytic_solution, (1.3, -0.4)),
    (DavisSkodjeModel(2.5), ds_analytic_solution, (0.8, 0.3)),
])
def test_analytic_solutions_solve_the_ode(model, solution, consts):
    t = np.linspace(-1, 2, 13)
    x = solution(model, *consts, t)
    dx = (solution(model, *consts, t + 1e-6) - solution(model, *consts, t - 1e-6)) / 2e-6
    np.testing.assert_allclose(dx, model.rhs(x), rtol=1e-6, atol=1e-8)


def test_ds_manifold_is_invariant():
    model = DavisSkodjeModel(1.2)
    x1 = np.linspace(0.05, 5, 50)
    f = model.rhs(np.column_stack([x1, ds_sim(x1)]))
    # tangent of x2 = x1/(1+x1) has slope 1/(1+x1)^2
    np.testing.assert_allclose(f[:, 1], f[:, 0] / (1 + x1) ** 2, rtol=1e-12, atol=1e-15)
    assert curvature_criterion(model, np.zeros(2)) == 0.0


@pytest.mark.parametrize("bad", [lambda: LinearModel(0.0), lambda: LinearModel(1.0, lam=-1),
                                 lambda: DavisSkodjeModel(1.0)])
def test_parameter_contracts(bad):
    with pytest.raises(ContractViolation):
        bad()


def test_state_shape_is_checked():
    with pytest.raises(ContractViolation):
        LinearModel(1.0).rhs(np.zeros(3))


def test_ds_singular_solution():
    with pytest.raises(SingularityError):
        ds_analytic_solution(DavisSkodjeModel(2.0), -1.0, 0.0, np.array([0.0]))
