"""Mechanism files and isothermal mass-action kinetics.

Mechanism format (line oriented, ``#`` starts a comment)::

    name: <label>                       optional
    state_unit: mol/cm3 | mol/L | mol/m3
    species: H H2 OH ...
    elements:
      H: 1 2 1 ...                      one row per element, one column per species
    conservation: 0.15 0.05 1.6         element totals, same order as the rows
    efficiencies: H=1 H2=2.5 ...        third-body efficiencies (default 1)
    reactions:
      O + H2 -> H + OH   A=5.08e4 b=2.7 Ea=26.3
      H2 -> 2 H          A=4.58e19 b=-1.4 Ea=436.7 [M]

Stoichiometric multiplicities are written as ``2 OH`` or ``2OH``. A third
body is flagged with a trailing ``[M]`` or by ``+ M`` on both sides. ``A`` is
in cm-mol-s units and ``Ea`` in kJ/mol.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp
from scipy.optimize import nnls

from .models import ContractViolation, OdeModel
from .problem import LinearConstraint

GAS_CONSTANT = 8.314  # J/(mol K)
STATE_UNITS = {"mol/cm3": 1.0, "mol/L": 1e-3, "mol/m3": 1e-6}
BUNDLED_MECHANISM = "h2_li_ren_adapted"


class MechanismParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.field = field


class EquilibriumNotFound(RuntimeError):
    def __init__(self, message: str, last_iterate: np.ndarray):
        super().__init__(message)
        self.last_iterate = last_iterate


@dataclass(frozen=True)
class Reaction:
    reactants: dict
    products: dict
    arrhenius_a: float
    arrhenius_b: float
    activation_energy: float
    has_third_body: bool = False

    def equation(self) -> str:
        def side(d):
            terms = [(f"{v} {k}" if v != 1 else k) for k, v in d.items()]
            return " + ".join(terms)

        return f"{side(self.reactants)} -> {side(self.products)}"


@dataclass(frozen=True)
class Mechanism:
    species: tuple
    reactions: tuple
    efficiencies: np.ndarray
    element_names: tuple
    element_matrix: np.ndarray
    conservation_values: np.ndarray
    state_unit: str = "mol/cm3"
    name: str = ""

    @property
    def concentration_factor(self) -> float:
        """mol/cm3 per state unit."""
        return STATE_UNITS[self.state_unit]

    @property
    def n_species(self) -> int:
        return len(self.species)

    def stoichiometry(self) -> np.ndarray:
        """Net stoichiometric matrix, species x reactions."""
        out = np.zeros((self.n_species, len(self.reactions)))
        for r, rxn in enumerate(self.reactions):
            for name, v in rxn.reactants.items():
                out[self.species.index(name), r] -= v
            for name, v in rxn.products.items():
                out[self.species.index(name), r] += v
        return out

    def reactant_orders(self) -> np.ndarray:
        out = np.zeros((len(self.reactions), self.n_species), dtype=int)
        for r, rxn in enumerate(self.reactions):
            for name, v in rxn.reactants.items():
                out[r, self.species.index(name)] = v
        return out

    def to_text(self) -> str:
        lines = []
        if self.name:
            lines.append(f"name: {self.name}")
        lines += [f"state_unit: {self.state_unit}", "species: " + " ".join(self.species), "", "elements:"]
        for el, row in zip(self.element_names, self.element_matrix):
            lines.append(f"  {el}: " + " ".join(str(int(v)) for v in row))
        lines.append("")
        lines.append("conservation: " + " ".join(repr(float(v)) for v in self.conservation_values))
        lines.append("")
        lines.append("efficiencies: " + " ".join(f"{s}={float(e)!r}" for s, e in zip(self.species, self.efficiencies)))
        lines.append("")
        lines.append("reactions:")
        for rxn in self.reactions:
            tail = " [M]" if rxn.has_third_body else ""
            lines.append(
                f"  {rxn.equation()}  A={rxn.arrhenius_a!r} b={rxn.arrhenius_b!r} Ea={rxn.activation_energy!r}{tail}"
            )
        return "\n".join(lines) + "\n"


_SPECIES_TERM = re.compile(r"^(\d+)?\s*([A-Za-z][A-Za-z0-9()_]*)$")


def _parse_side(text, lineno):
    counts = {}
    third_body = False
    for term in text.split("+"):
        term = term.strip()
        if not term:
            raise MechanismParseError("empty term in reaction equation", lineno, "reactions")
        match = _SPECIES_TERM.match(term.replace(" ", "") if term[0].isdigit() else term)
        if match is None:
            raise MechanismParseError(f"cannot read species term {term!r}", lineno, "reactions")
        mult = int(match.group(1) or 1)
        name = match.group(2)
        if name == "M":
            if mult != 1:
                raise MechanismParseError("third body M cannot carry a multiplicity", lineno, "reactions")
            third_body = True
            continue
        counts[name] = counts.get(name, 0) + mult
    return counts, third_body


def _parse_reaction(line, lineno):
    flag = False
    if line.endswith("[M]"):
        flag = True
        line = line[:-3].strip()
    parts = line.split()
    params = {}
    eq_tokens = []
    for tok in parts:
        if "=" in tok:
            key, _, val = tok.partition("=")
            try:
                params[key] = float(val)
            except ValueError:
                raise MechanismParseError(f"bad number {val!r}", lineno, key) from None
        else:
            eq_tokens.append(tok)
    for key in ("A", "b", "Ea"):
        if key not in params:
            raise MechanismParseError("missing Arrhenius parameter", lineno, key)
    unknown = set(params) - {"A", "b", "Ea"}
    if unknown:
        raise MechanismParseError(f"unknown parameter(s) {sorted(unknown)}", lineno, "reactions")
    if params["A"] <= 0:
        raise MechanismParseError("pre-exponential factor must be positive", lineno, "A")
    equation = " ".join(eq_tokens)
    if equation.count("->") != 1:
        raise MechanismParseError("reaction needs exactly one '->'", lineno, "reactions")
    lhs, rhs = equation.split("->")
    reactants, tb_l = _parse_side(lhs, lineno)
    products, tb_r = _parse_side(rhs, lineno)
    if tb_l != tb_r:
        raise MechanismParseError("third body M must appear on both sides", lineno, "reactions")
    if not reactants or not products:
        raise MechanismParseError("reaction needs at least one reactant and one product", lineno, "reactions")
    return Reaction(reactants, products, params["A"], params["b"], params["Ea"], flag or tb_l)


def parse_mechanism(source: str) -> Mechanism:
    """Parse a mechanism document and validate its invariants."""
    name = ""
    unit = "mol/cm3"
    species = None
    elements = []
    conservation = None
    efficiencies = {}
    reactions = []
    section = None
    reaction_lines = []
    for lineno, raw in enumerate(source.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        indented = raw[:1].isspace()
        head, sep, rest = line.partition(":")
        key = head.strip().lower()
        if not indented and sep and key in {"name", "state_unit", "species", "elements", "conservation", "efficiencies", "reactions"}:
            section = key
            rest = rest.strip()
            if key == "name":
                name = rest
            elif key == "state_unit":
                if rest not in STATE_UNITS:
                    raise MechanismParseError(f"unknown state unit {rest!r}", lineno, "state_unit")
                unit = rest
            elif key == "species":
                species = rest.split()
                if not species:
                    raise MechanismParseError("species list is empty", lineno, "species")
                if len(set(species)) != len(species):
                    dup = sorted({s for s in species if species.count(s) > 1})
                    raise MechanismParseError(f"duplicate species {dup}", lineno, "species")
            elif key == "conservation":
                try:
                    conservation = [float(v) for v in rest.split()]
                except ValueError:
                    raise MechanismParseError("conservation totals must be numbers", lineno, "conservation") from None
            elif key == "efficiencies":
                for tok in rest.split():
                    sp, eq, val = tok.partition("=")
                    if not eq:
                        raise MechanismParseError(f"expected name=value, got {tok!r}", lineno, "efficiencies")
                    try:
                        efficiencies[sp] = (float(val), lineno)
                    except ValueError:
                        raise MechanismParseError(f"bad efficiency {val!r}", lineno, "efficiencies") from None
            elif rest:
                raise MechanismParseError("section header must stand alone", lineno, key)
            continue
        if section == "elements":
            el, sep, vals = line.partition(":")
            if not sep:
                raise MechanismParseError("element row must read 'X: n1 n2 ...'", lineno, "elements")
            try:
                row = [int(v) for v in vals.split()]
            except ValueError:
                raise MechanismParseError("element counts must be integers", lineno, "elements") from None
            elements.append((el.strip(), row, lineno))
        elif section == "reactions":
            reaction_lines.append((lineno, line))
        else:
            raise MechanismParseError(f"unexpected content {line!r}", lineno)

    if species is None:
        raise MechanismParseError("species list is empty", None, "species")
    n = len(species)
    for lineno, line in reaction_lines:
        rxn = _parse_reaction(line, lineno)
        for sp in itertools.chain(rxn.reactants, rxn.products):
            if sp not in species:
                raise MechanismParseError(f"unknown species {sp!r}", lineno, "reactions")
        reactions.append((rxn, lineno))
    if not elements:
        raise MechanismParseError("no element rows given", None, "elements")
    for el, row, lineno in elements:
        if len(row) != n:
            raise MechanismParseError(f"element row {el} has {len(row)} entries, expected {n}", lineno, "elements")
        if any(v < 0 for v in row):
            raise MechanismParseError("element counts must be nonnegative", lineno, "elements")
    emat = np.array([row for _, row, _ in elements], dtype=float)
    if conservation is None:
        raise MechanismParseError("conservation totals missing", None, "conservation")
    if len(conservation) != len(elements):
        raise MechanismParseError("one conservation total per element row is required", None, "conservation")
    eff = np.ones(n)
    for sp, (val, lineno) in efficiencies.items():
        if sp not in species:
            raise MechanismParseError(f"unknown species {sp!r}", lineno, "efficiencies")
        if val < 0:
            raise MechanismParseError("efficiencies must be nonnegative", lineno, "efficiencies")
        eff[species.index(sp)] = val
    for rxn, lineno in reactions:
        nu = np.zeros(n)
        for sp, v in rxn.reactants.items():
            nu[species.index(sp)] -= v
        for sp, v in rxn.products.items():
            nu[species.index(sp)] += v
        imbalance = emat @ nu
        if np.any(imbalance != 0):
            bad = [el for (el, _, _), d in zip(elements, imbalance) if d != 0]
            raise MechanismParseError(f"element imbalance in {rxn.equation()} for {bad}", lineno, "reactions")
    return Mechanism(
        species=tuple(species),
        reactions=tuple(r for r, _ in reactions),
        efficiencies=eff,
        element_names=tuple(el for el, _, _ in elements),
        element_matrix=emat,
        conservation_values=np.array(conservation, dtype=float),
        state_unit=unit,
        name=name,
    )


def bundled_mechanism_text(name: str = BUNDLED_MECHANISM) -> str:
    return resources.files("simfold.data").joinpath(f"{name}.mech").read_text()


def load_mechanism(path_or_name: str = BUNDLED_MECHANISM) -> Mechanism:
    """Load a bundled mechanism by name or any mechanism file by path."""
    try:
        text = bundled_mechanism_text(path_or_name)
    except (FileNotFoundError, OSError):
        with open(path_or_name) as fh:
            text = fh.read()
    return parse_mechanism(text)


def rate_coefficient(reaction: Reaction, temperature: float) -> float:
    if not temperature > 0:
        raise ContractViolation(f"temperature must be positive, got {temperature}")
    t = float(temperature)
    return reaction.arrhenius_a * t**reaction.arrhenius_b * math.exp(
        -reaction.activation_energy * 1000.0 / (GAS_CONSTANT * t)
    )


def conservation_residual(mechanism: Mechanism, x) -> np.ndarray:
    """``element_matrix @ x - conservation_values`` (batched over leading axes)."""
    x = np.asarray(x, dtype=float)
    return x @ mechanism.element_matrix.T - mechanism.conservation_values


class PolynomialField:
    """Vector field ``f(x) = sum_m v_m c_m x**E_m`` with exact derivatives.

    Derivatives up to third order are generated from the monomial list once;
    each order is stored as a sparse map from nonzero monomial derivatives to
    flattened output entries.
    """

    max_order = 3

    def __init__(self, exponents, coefficients, directions):
        self.exponents = np.asarray(exponents, dtype=int)
        self.coefficients = np.asarray(coefficients, dtype=float)
        self.directions = np.asarray(directions, dtype=float)
        self.n = self.exponents.shape[1]
        self.max_power = int(self.exponents.max(initial=0))
        self._orders = [self._derivative_map(k) for k in range(self.max_order + 1)]

    def _derivative_map(self, order):
        n = self.n
        exps, rows, cols, vals = [], [], [], []
        tuples = list(itertools.product(range(n), repeat=order))
        for m, (e, c) in enumerate(zip(self.exponents, self.coefficients)):
            for t_idx, idx in enumerate(tuples):
                counts = np.bincount(np.asarray(idx, dtype=int), minlength=n) if order else np.zeros(n, dtype=int)
                if np.any(counts > e):
                    continue
                factor = 1.0
                for a in range(n):
                    for q in range(counts[a]):
                        factor *= e[a] - q
                entry = len(exps)
                exps.append(e - counts)
                for i in range(n):
                    if self.directions[m, i] != 0.0:
                        rows.append(entry)
                        cols.append(i * len(tuples) + t_idx)
                        vals.append(self.directions[m, i] * c * factor)
        size = n * len(tuples)
        if not exps:
            return np.zeros((0, n), dtype=int), sparse.csr_matrix((0, size))
        mapping = sparse.csr_matrix((vals, (rows, cols)), shape=(len(exps), size))
        return np.array(exps, dtype=int), mapping

    def derivative(self, x, order):
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        flat = x.reshape(-1, self.n)
        exps, mapping = self._orders[order]
        out_shape = lead + (self.n,) * (order + 1)
        if exps.shape[0] == 0:
            return np.zeros(out_shape)
        powers = flat[:, :, None] ** np.arange(self.max_power + 1)[None, None, :]
        # product over species of x_a ** exps[e, a]
        terms = np.ones((flat.shape[0], exps.shape[0]))
        for a in range(self.n):
            terms *= powers[:, a, exps[:, a]]
        out = (mapping.T @ terms.T).T
        return np.asarray(out).reshape(out_shape)


def _mechanism_field(mechanism: Mechanism, temperature: float) -> PolynomialField:
    s = mechanism.concentration_factor
    orders = mechanism.reactant_orders()
    stoich = mechanism.stoichiometry()
    exps, coefs, dirs = [], [], []
    for r, rxn in enumerate(mechanism.reactions):
        k = rate_coefficient(rxn, temperature)
        order = int(orders[r].sum())
        if rxn.has_third_body:
            # k [M] prod [X]^nu in state units: s**(order + 1) / s
            scale = k * s**order
            for i, eff in enumerate(mechanism.efficiencies):
                if eff == 0.0:
                    continue
                e = orders[r].copy()
                e[i] += 1
                exps.append(e)
                coefs.append(scale * eff)
                dirs.append(stoich[:, r])
        else:
            exps.append(orders[r].copy())
            coefs.append(k * s ** (order - 1))
            dirs.append(stoich[:, r])
    return PolynomialField(exps, coefs, dirs)


def net_production_rates(mechanism: Mechanism, x, temperature: float) -> np.ndarray:
    """Mass-action species rates in state units per second."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != mechanism.n_species:
        raise ContractViolation(f"state has {x.shape[-1]} entries, mechanism has {mechanism.n_species} species")
    s = mechanism.concentration_factor
    conc = s * x
    orders = mechanism.reactant_orders()
    rates = []
    for r, rxn in enumerate(mechanism.reactions):
        q = rate_coefficient(rxn, temperature) * np.prod(conc ** orders[r], axis=-1)
        if rxn.has_third_body:
            q = q * (conc @ mechanism.efficiencies)
        rates.append(q)
    return np.stack(rates, axis=-1) @ mechanism.stoichiometry().T / s


class MechanismModel(OdeModel):
    """Isothermal constant-volume reactor as an :class:`OdeModel`."""

    state_lower_bound = -1e-12

    def __init__(self, mechanism: Mechanism, temperature: float, equilibrium_seed=None):
        if not temperature > 0:
            raise ContractViolation("temperature must be positive")
        self.mechanism = mechanism
        self.temperature = float(temperature)
        self.dimension = mechanism.n_species
        self.state_names = list(mechanism.species)
        self.rate_constants = np.array([rate_coefficient(r, temperature) for r in mechanism.reactions])
        self._field = _mechanism_field(mechanism, temperature)
        self.conservation = LinearConstraint(mechanism.element_matrix, mechanism.conservation_values)
        seed = feasible_state(mechanism) if equilibrium_seed is None else np.asarray(equilibrium_seed, dtype=float)
        self.equilibrium = find_equilibrium(self, seed)

    def rhs(self, x):
        return self._field.derivative(self.check_state(x), 0)

    def jacobian(self, x):
        return self._field.derivative(self.check_state(x), 1)

    def hessian(self, x):
        return self._field.derivative(self.check_state(x), 2)

    def third_derivative(self, x):
        return self._field.derivative(self.check_state(x), 3)

    def index(self, species: str) -> int:
        return self.state_names.index(species)


def mechanism_as_model(mechanism: Mechanism, temperature: float) -> MechanismModel:
    return MechanismModel(mechanism, temperature)


def feasible_state(mechanism: Mechanism) -> np.ndarray:
    """A nonnegative state meeting the element totals (stable species preferred)."""
    x, resid = nnls(mechanism.element_matrix, mechanism.conservation_values)
    if resid > 1e-12 * max(1.0, np.abs(mechanism.conservation_values).max()):
        raise ContractViolation("element totals admit no nonnegative state")
    return x


def find_equilibrium(model: MechanismModel, seed, horizon: Optional[float] = None, tol: float = 1e-12,
                     max_newton: int = 50) -> np.ndarray:
    """Relax ``seed`` with a stiff integration, then polish with damped Newton.

    The Newton system stacks the rate equations with the element balances of
    the seed, which removes the conserved directions from the null space.
    """
    seed = np.asarray(seed, dtype=float)
    emat = model.mechanism.element_matrix
    totals = emat @ seed
    if horizon is None:
        horizon = _relaxation_horizon(model, seed)
    sol = solve_ivp(
        lambda t, x: model.rhs(x), (0.0, horizon), seed, method="Radau",
        jac=lambda t, x: model.jacobian(x), rtol=1e-8, atol=1e-14 * max(1.0, np.abs(seed).max()),
    )
    x = sol.y[:, -1] if sol.y.size else seed.copy()
    scale = max(1.0, np.abs(x).max())
    for _ in range(max_newton):
        f = model.rhs(x)
        if np.max(np.abs(f)) <= tol * scale:
            break
        system = np.vstack([model.jacobian(x), emat])
        residual = np.concatenate([f, emat @ x - totals])
        step = np.linalg.lstsq(system, -residual, rcond=None)[0]
        alpha = 1.0
        base = np.linalg.norm(residual)
        while alpha > 1e-10:
            trial = x + alpha * step
            trial_res = np.concatenate([model.rhs(trial), emat @ trial - totals])
            if np.all(trial >= -1e-14 * scale) and np.linalg.norm(trial_res) < base:
                x = trial
                break
            alpha *= 0.5
        else:
            break
    f = model.rhs(x)
    if not np.max(np.abs(f)) <= max(1e-10, tol * scale) * 10:
        raise EquilibriumNotFound(f"Newton stalled with |f| = {np.max(np.abs(f)):.3e}", x)
    return x


def _relaxation_horizon(model, x):
    # a conservative multiple of the slowest nonzero relaxation time at the seed
    eig = np.abs(np.linalg.eigvals(model.jacobian(x)).real)
    eig = eig[eig > 1e-8 * max(eig.max(initial=0.0), 1e-300)]
    slowest = eig.min() if eig.size else 1.0
    return 50.0 / slowest
