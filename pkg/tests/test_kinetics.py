import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from simfold.kinetics import (
    BUNDLED_MECHANISM,
    GAS_CONSTANT,
    MechanismParseError,
    bundled_mechanism_text,
    conservation_residual,
    feasible_state,
    load_mechanism,
    mechanism_as_model,
    net_production_rates,
    parse_mechanism,
    rate_coefficient,
)
from simfold.models import ContractViolation

SMALL = """\
species: A B
elements:
  X: 1 2
conservation: 1.0
reactions:
  2 A -> B   A=2.0 b=0 Ea=0
  B -> 2 A   A=1.0 b=0 Ea=0
"""


def test_bundled_mechanism_shape(mechanism):
    assert mechanism.species == ("H", "H2", "OH", "O", "H2O", "N2")
    assert len(mechanism.reactions) == 12
    assert mechanism.element_names == ("H", "O", "N")
    assert mechanism.state_unit == "mol/m3"
    assert sum(r.has_third_body for r in mechanism.reactions) == 6


def test_round_trip(mechanism):
    again = parse_mechanism(mechanism.to_text())
    assert again.species == mechanism.species
    assert again.to_text() == mechanism.to_text()
    np.testing.assert_array_equal(again.efficiencies, mechanism.efficiencies)


def test_rate_coefficient_arrhenius(mechanism):
    rxn = mechanism.reactions[0]
    t = 3000.0
    expected = rxn.arrhenius_a * t ** rxn.arrhenius_b * np.exp(-rxn.activation_energy * 1e3 / (GAS_CONSTANT * t))
    assert rate_coefficient(rxn, t) == pytest.approx(expected, rel=1e-14)
    with pytest.raises(ContractViolation):
        rate_coefficient(rxn, 0.0)


def test_element_conservation_and_inert(mech_model, mechanism, rng):
    x = mech_model.equilibrium * rng.uniform(0, 3, (200, 6))
    f = mech_model.rhs(x)
    scale = np.maximum(np.abs(f) @ mechanism.element_matrix.T, 1e-300)
    assert np.max(np.abs(f @ mechanism.element_matrix.T) / scale) < 1e-14
    assert np.all(f[:, mechanism.species.index("N2")] == 0.0)


def test_polynomial_field_matches_rate_laws(mech_model, mechanism, rng):
    x = mech_model.equilibrium * rng.uniform(0.2, 2, (20, 6))
    direct = net_production_rates(mechanism, x, 3000.0)
    np.testing.assert_allclose(mech_model.rhs(x), direct, rtol=1e-12, atol=1e-12 * np.abs(direct).max())


def test_jacobian_and_higher_tensors(mech_model, rng):
    x = mech_model.equilibrium * rng.uniform(0.5, 1.5, 6)
    # the field is a cubic polynomial, so wide central steps stay accurate
    h = 1e-4 * np.maximum(np.abs(x), 1e-2)
    for lo, hi in ((mech_model.rhs, mech_model.jacobian), (mech_model.jacobian, mech_model.hessian),
                   (mech_model.hessian, mech_model.third_derivative)):
        fd = np.stack([(lo(x + h[i] * e) - lo(x - h[i] * e)) / (2 * h[i]) for i, e in enumerate(np.eye(6))], -1)
        exact = hi(x)
        assert np.max(np.abs(fd - exact)) <= 1e-6 * np.max(np.abs(exact))


def test_equilibrium(mech_model, mechanism):
    eq = mech_model.equilibrium
    assert np.max(np.abs(mech_model.rhs(eq))) <= 1e-10
    assert np.all(eq >= 0)
    assert np.max(np.abs(conservation_residual(mechanism, eq))) <= 1e-12


def test_feasible_state(mechanism):
    x = feasible_state(mechanism)
    assert np.all(x >= 0)
    np.testing.assert_allclose(mechanism.element_matrix @ x, mechanism.conservation_values, atol=1e-14)


def test_small_mechanism_mass_action():
    mech = parse_mechanism(SMALL)
    model = mechanism_as_model(mech, 1000.0)
    # 2A <-> B with k_f = 2, k_b = 1 in mol/cm3 units
    x = np.array([0.3, 0.2])
    rate = 2.0 * 0.3**2 - 1.0 * 0.2
    np.testing.assert_allclose(model.rhs(x), [-2 * rate, rate], rtol=1e-13)
    eq = model.equilibrium
    assert 2 * eq[0] ** 2 == pytest.approx(eq[1], rel=1e-9)


def test_unit_conversion():
    for unit, factor in (("mol/L", 1e-3), ("mol/m3", 1e-6)):
        mech = parse_mechanism(f"state_unit: {unit}\n" + SMALL)
        model = mechanism_as_model(mech, 1000.0)
        x = np.array([0.3, 0.2])
        c = x * factor
        rate = (2.0 * c[0] ** 2 - 1.0 * c[1]) / factor
        np.testing.assert_allclose(model.rhs(x), [-2 * rate, rate], rtol=1e-12)


@pytest.mark.parametrize("text,field", [
    (SMALL.replace("species: A B", "species: A A"), "species"),
    (SMALL.replace("X: 1 2", "X: 1 2 3"), "elements"),
    (SMALL.replace("X: 1 2", "X: 1 x"), "elements"),
    (SMALL.replace("conservation: 1.0", "conservation: one"), "conservation"),
    (SMALL.replace("2 A -> B ", "3 A -> B "), "reactions"),
    (SMALL.replace("B -> 2 A", "C -> 2 A"), "reactions"),
    ("state_unit: furlongs\n" + SMALL, "state_unit"),
    (SMALL + "efficiencies: Q=2\n", "efficiencies"),
])
def test_parse_errors_name_the_field(text, field):
    with pytest.raises(MechanismParseError) as info:
        parse_mechanism(text)
    assert info.value.field == field


def test_parse_error_reports_line():
    with pytest.raises(MechanismParseError) as info:
        parse_mechanism(SMALL.replace("B -> 2 A", "B -> 2 C"))
    assert info.value.line == 7


def test_load_by_path(tmp_path):
    p = tmp_path / "m.mech"
    p.write_text(bundled_mechanism_text(BUNDLED_MECHANISM))
    assert load_mechanism(str(p)).species == load_mechanism().species
    with pytest.raises(FileNotFoundError):
        load_mechanism(str(tmp_path / "missing.mech"))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 0.2), min_size=6, max_size=6))
def test_conservation_property(mech_model, mechanism, x):
    f = mech_model.rhs(np.array(x))
    scale = max(np.abs(f) @ np.abs(mechanism.element_matrix).T.max(axis=1), 1e-300)
    assert np.max(np.abs(mechanism.element_matrix @ f)) <= 1e-13 * scale
