import numpy as np
import pytest

from simfold.acceptance import manifold_diameter, relaxation_distance
from simfold.figures import (FIG6_H2_OFFSET, FIG6_H2_SLOPE, build_figure, fig6_grid, random_feasible_states,
                             relaxation_times, _mechanism_template)
from simfold.sim import Trajectory


def test_fig6_grid_follows_slope():
    grid = np.array(fig6_grid((3, 4)))
    assert grid.shape == (12, 2)
    offsets = grid[:, 1] - FIG6_H2_SLOPE * grid[:, 0]
    assert offsets.min() == pytest.approx(FIG6_H2_OFFSET[0])
    assert offsets.max() == pytest.approx(FIG6_H2_OFFSET[1])


def test_relaxation_times_start_at_zero():
    t = relaxation_times(2e-3, 50)
    assert t[0] == 0.0 and t[-1] == pytest.approx(2e-3)
    assert np.all(np.diff(t) > 0)


def test_random_states_are_feasible(mech_model):
    tmpl = _mechanism_template(mech_model, -4e-4, ["H2O"], [0.01])
    states = random_feasible_states(tmpl, 5, 3)
    a = np.atleast_2d(mech_model.conservation.matrix)
    assert np.allclose(states @ a.T, mech_model.conservation.target, rtol=1e-12, atol=1e-14)
    assert states.min() >= 0.0
    assert np.array_equal(states, random_feasible_states(tmpl, 5, 3))


def test_relaxation_distance_measures_after_settling():
    pts = np.array([[0.0, 0.0, 1.0], [1.0, 1.0, 1.0]])  # curve x1 = x0, x2 = 1
    t = np.array([0.0, 0.5, 1.0, 2.0])
    x = np.array([[0.5, 0.9, 1.0], [0.5, 0.6, 1.0], [0.5, 0.52, 1.0], [2.0, 0.0, 1.0]])
    d0, settled = relaxation_distance(Trajectory(t, x), pts, 0, [1, 2], 0.5)
    assert d0 == pytest.approx(0.4)
    # the last sample leaves the computed range and is ignored
    assert settled == pytest.approx(0.1)
    assert manifold_diameter(pts[:, [1, 2]]) == pytest.approx(1.0)


def test_relaxation_distance_without_samples_is_infinite():
    pts = np.array([[0.0, 0.0], [1.0, 1.0]])
    traj = Trajectory(np.array([0.0, 1.0]), np.array([[0.5, 0.5], [3.0, 3.0]]))
    assert relaxation_distance(traj, pts, 0, [1], 0.5)[1] == np.inf


def test_unknown_figure():
    with pytest.raises(ValueError, match="fig1"):
        build_figure("fig9")
