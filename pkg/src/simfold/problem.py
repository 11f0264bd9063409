"""Variational problem definition shared by the discretization and the driver."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .models import ContractViolation, OdeModel

FORWARD = "forward"
REVERSE = "reverse"


@dataclass(frozen=True)
class LinearConstraint:
    """Affine point constraint ``matrix @ x(t*) = target``."""

    matrix: np.ndarray
    target: np.ndarray

    def residual(self, x):
        return np.asarray(x, dtype=float) @ np.asarray(self.matrix, dtype=float).T - self.target


@dataclass
class VariationalProblem:
    """Minimize the integrated curvature criterion over trajectories of ``model``.

    The fixed (progress) variables and the optional point constraint act at
    the anchor time, which is ``t0`` in forward mode and ``tf`` in reverse
    mode.
    """

    model: OdeModel
    mode: str
    t0: float
    tf: float
    fixed_indices: Sequence[int]
    fixed_values: Sequence[float]
    constraint: Optional[LinearConstraint] = None
    lower_bounds: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        n = self.model.dimension
        self.fixed_indices = tuple(int(i) for i in self.fixed_indices)
        self.fixed_values = np.asarray(self.fixed_values, dtype=float).reshape(-1)
        if self.mode not in (FORWARD, REVERSE):
            raise ContractViolation(f"mode must be 'forward' or 'reverse', got {self.mode!r}")
        if not self.t0 < self.tf:
            raise ContractViolation(f"need t0 < tf, got t0={self.t0}, tf={self.tf}")
        if not self.fixed_indices:
            raise ContractViolation("at least one progress variable must be fixed at the anchor time")
        if len(set(self.fixed_indices)) != len(self.fixed_indices):
            raise ContractViolation("fixed indices must be distinct")
        if len(self.fixed_indices) >= n or any(not 0 <= i < n for i in self.fixed_indices):
            raise ContractViolation("fixed indices must be a strict subset of the state indices")
        if len(self.fixed_values) != len(self.fixed_indices):
            raise ContractViolation("one fixed value is required per fixed index")
        if self.lower_bounds is None:
            self.lower_bounds = getattr(self.model, "state_lower_bound", None)
        if self.lower_bounds is not None:
            self.lower_bounds = np.broadcast_to(np.asarray(self.lower_bounds, dtype=float), (n,)).copy()

    @property
    def t_star(self) -> float:
        return self.t0 if self.mode == FORWARD else self.tf

    @property
    def free_indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.model.dimension) if i not in self.fixed_indices)
