import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from simfold.models import ContractViolation, ds_sim
from simfold.oracles import (
    DsOracle,
    LinearOracle,
    ds_optimal_c2,
    ds_reduced_objective,
    ds_x2_tf,
    golden_section,
    linear_chi,
    linear_optimal_c2,
    linear_reduced_objective,
    linear_sampled_objective,
    linear_x1_tf,
    sampled_minimizer,
)


def test_chi_identity_against_c1_route():
    for g, t0, x2 in ((0.2, -5.0, 1.0), (1.0, -3.0, 2.0), (3.0, -1.0, 0.5)):
        o = LinearOracle(g, t0, 0.0, x2)
        assert linear_x1_tf(o) == pytest.approx(x2 * (1 + linear_chi(o)), rel=1e-12)


def test_linear_c2_minimizes_reduced_objective():
    o = LinearOracle(1.0, -2.0, 0.0, 1.0)
    c2 = linear_optimal_c2(o)
    res = optimize.minimize_scalar(lambda c: linear_reduced_objective(o, c), bracket=(c2 - 0.1, c2 + 0.1),
                                   tol=1e-12)
    assert res.x == pytest.approx(c2, rel=1e-5, abs=1e-8)
    h = linear_sampled_objective(o)
    assert sampled_minimizer(h, 0.0) == pytest.approx(c2, rel=1e-9, abs=1e-12)


def test_chi_surface_monotone():
    t0s = np.arange(-10.0, -0.4, 0.5)
    for g in (0.25, 1.0, 2.5, 5.0):
        chi = np.abs([linear_chi(LinearOracle(g, t0, 0.0, 1.0)) for t0 in t0s])
        assert np.all(np.diff(chi) > 0)  # grows toward t0 = 0
    for t0 in (-8.0, -3.0, -1.0):
        chi = np.abs([linear_chi(LinearOracle(g, t0, 0.0, 1.0)) for g in np.linspace(0.25, 5, 20)])
        assert np.all(np.diff(chi) < 0)
    assert abs(linear_chi(LinearOracle(5.0, -10.0, 0.0, 1.0))) <= 1e-8


def test_ds_limit_approaches_sim():
    errs = [abs(ds_x2_tf(DsOracle(1.2, t0, 0.0, 1.5)) - ds_sim(1.5)) for t0 in (-2.0, -4.0, -8.0)]
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-4


@settings(max_examples=10, deadline=None)
@given(st.floats(1.05, 5.0), st.floats(-8.0, -2.0), st.floats(1.05, 3.0))
def test_ds_c2_quadrature_vs_golden(gamma, t0, x1):
    o = DsOracle(gamma, t0, 0.0, x1)
    c2 = ds_optimal_c2(o)
    assert sampled_minimizer(ds_reduced_objective(o), 0.0) == pytest.approx(c2, rel=1e-8)


def test_golden_section_quadratic():
    assert golden_section(lambda c: (c - math.pi) ** 2, 0.0, 10.0) == pytest.approx(math.pi, rel=1e-7)


@pytest.mark.parametrize("bad", [
    lambda: LinearOracle(0.0, -1.0, 0.0, 1.0),
    lambda: LinearOracle(1.0, 1.0, 0.0, 1.0),
    lambda: DsOracle(1.0, -1.0, 0.0, 1.0),
    lambda: DsOracle(2.0, -1.0, 0.0, -0.5),
])
def test_oracle_contracts(bad):
    with pytest.raises(ContractViolation):
        bad()


def test_theorem_regime_flag():
    assert DsOracle(1.2, -8.0, 0.0, 1.2).theorem_regime
    assert not DsOracle(1.2, -8.0, 0.0, 0.8).theorem_regime
