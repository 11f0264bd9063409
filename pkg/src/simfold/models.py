"""ODE models, analytic test systems and the curvature criterion.

All models evaluate batched states: an input of shape ``(..., n)`` yields
right-hand sides of shape ``(..., n)``, Jacobians ``(..., n, n)`` and the
higher derivative tensors ``(..., n, n, n)`` / ``(..., n, n, n, n)`` where the
first axis always indexes the component of ``f``.
"""

from __future__ import annotations

import math

import numpy as np


class ContractViolation(ValueError):
    """Raised when an input violates a documented precondition."""


class SingularityError(ArithmeticError):
    """Raised when a closed-form solution hits a pole."""


class OdeModel:
    """Autonomous ODE ``x' = f(x)`` with a stable equilibrium.

    Subclasses implement :meth:`rhs` and :meth:`jacobian`. The second and
    third derivative tensors default to central differences of the next
    lower derivative; models used in reverse mode should override them.
    """

    dimension: int
    state_names: list[str]
    equilibrium: np.ndarray

    def rhs(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        raise NotImplementedError

    def hessian(self, x):
        """``T[..., i, a, b] = d^2 f_i / dx_a dx_b``."""
        return _fd_tensor(self.jacobian, np.asarray(x, dtype=float))

    def third_derivative(self, x):
        """``Q[..., i, a, b, c] = d^3 f_i / dx_a dx_b dx_c``."""
        return _fd_tensor(self.hessian, np.asarray(x, dtype=float))

    def check_state(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dimension,):
            raise ContractViolation(
                f"state has trailing dimension {x.shape[-1:]}, expected ({self.dimension},)"
            )
        return x


def _fd_tensor(fun, x, rel_step=1e-6):
    # derivative index appended as the last axis
    n = x.shape[-1]
    cols = []
    for a in range(n):
        step = rel_step * (1.0 + np.abs(x[..., a]))
        e = np.zeros_like(x)
        e[..., a] = step
        diff = fun(x + e) - fun(x - e)
        step = step.reshape(step.shape + (1,) * (diff.ndim - step.ndim))
        cols.append(diff / (2.0 * step))
    return np.stack(cols, axis=-1)


class LinearModel(OdeModel):
    """Rotated two-time-scale linear system ``x' = A x``.

    The diagonal system ``y1' = -lam*y1, y2' = -(lam+gamma)*y2`` is rotated by
    ``pi/4`` so that the slow eigenspace is the bisectrix ``x1 = x2`` and the
    fast one is ``x1 = -x2``.
    """

    def __init__(self, gamma: float, lam: float = 1.0):
        if gamma <= 0 or lam <= 0:
            raise ContractViolation("gamma and lambda must be positive")
        self.gamma = float(gamma)
        self.lam = float(lam)
        self.dimension = 2
        self.state_names = ["x1", "x2"]
        self.equilibrium = np.zeros(2)
        c = math.cos(math.pi / 4)
        s = math.sin(math.pi / 4)
        self.rotation = np.array([[c, -s], [s, c]])
        g2 = self.gamma / 2.0
        self.matrix_a = np.array(
            [[-self.lam - g2, g2], [g2, -self.lam - g2]]
        )

    def rhs(self, x):
        x = self.check_state(x)
        return x @ self.matrix_a.T

    def jacobian(self, x):
        x = self.check_state(x)
        return np.broadcast_to(self.matrix_a, x.shape[:-1] + (2, 2)).copy()

    def hessian(self, x):
        x = self.check_state(x)
        return np.zeros(x.shape[:-1] + (2, 2, 2))

    def third_derivative(self, x):
        x = self.check_state(x)
        return np.zeros(x.shape[:-1] + (2, 2, 2, 2))


class DavisSkodjeModel(OdeModel):
    """Davis-Skodje system with slow invariant manifold ``x2 = x1/(1+x1)``.

    The forcing term is evaluated in the partial-fraction form
    ``gamma - (gamma+1) u + u**2`` with ``u = 1/(1+x1)`` which keeps all
    derivatives short.
    """

    def __init__(self, gamma: float):
        if gamma <= 1:
            raise ContractViolation("Davis-Skodje requires gamma > 1")
        self.gamma = float(gamma)
        self.dimension = 2
        self.state_names = ["x1", "x2"]
        self.equilibrium = np.zeros(2)

    def _forcing(self, x1, order):
        g = self.gamma
        u = 1.0 / (1.0 + x1)
        if order == 0:
            return ((g - 1.0) * x1 + g * x1**2) * u**2
        if order == 1:
            return (g + 1.0) * u**2 - 2.0 * u**3
        if order == 2:
            return -2.0 * (g + 1.0) * u**3 + 6.0 * u**4
        return 6.0 * (g + 1.0) * u**4 - 24.0 * u**5

    def rhs(self, x):
        x = self.check_state(x)
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([-x1, -self.gamma * x2 + self._forcing(x1, 0)], axis=-1)

    def jacobian(self, x):
        x = self.check_state(x)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = -1.0
        out[..., 1, 0] = self._forcing(x[..., 0], 1)
        out[..., 1, 1] = -self.gamma
        return out

    def hessian(self, x):
        x = self.check_state(x)
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 1, 0, 0] = self._forcing(x[..., 0], 2)
        return out

    def third_derivative(self, x):
        x = self.check_state(x)
        out = np.zeros(x.shape[:-1] + (2, 2, 2, 2))
        out[..., 1, 0, 0, 0] = self._forcing(x[..., 0], 3)
        return out

    def sim(self, x1):
        """Exact slow invariant manifold ordinate."""
        return ds_sim(x1)


def ds_sim(x1):
    """Return ``x1 / (1 + x1)``, the Davis-Skodje slow manifold."""
    x1 = np.asarray(x1, dtype=float)
    if np.any(x1 == -1.0):
        raise SingularityError("slow manifold has a pole at x1 = -1")
    out = x1 / (1.0 + x1)
    return float(out) if out.ndim == 0 else out


def curvature_criterion(model: OdeModel, x):
    """Squared curvature ``||J_f(x) f(x)||^2`` (batched)."""
    x = model.check_state(x)
    r = np.einsum("...ij,...j->...i", model.jacobian(x), model.rhs(x))
    out = np.einsum("...i,...i->...", r, r)
    return float(out) if out.ndim == 0 else out


def curvature_derivatives(model: OdeModel, x, order: int = 2):
    """Value, gradient and (optionally) Hessian of the curvature criterion.

    With ``r = J f`` and ``R = dr/dx``::

        R[i, a]   = T[i, j, a] f[j] + J[i, j] J[j, a]
        grad      = 2 R^T r
        hess[a,b] = 2 R^T R + 2 r[i] d^2 r_i / dx_a dx_b

    Returns ``(phi, grad)`` for ``order=1`` and ``(phi, grad, hess)`` otherwise.
    """
    x = model.check_state(x)
    f = model.rhs(x)
    jac = model.jacobian(x)
    tens = model.hessian(x)
    r = np.einsum("...ij,...j->...i", jac, f)
    big_r = np.einsum("...ija,...j->...ia", tens, f) + np.einsum("...ij,...ja->...ia", jac, jac)
    phi = np.einsum("...i,...i->...", r, r)
    grad = 2.0 * np.einsum("...ia,...i->...a", big_r, r)
    if order == 1:
        return phi, grad
    quad = model.third_derivative(x)
    # contract with r first to keep the intermediates at (..., n, n)
    tr = np.einsum("...i,...ija->...ja", r, tens)
    second = (
        np.einsum("...i,...ijab,...j->...ab", r, quad, f)
        + np.einsum("...ja,...jb->...ab", tr, jac)
        + np.einsum("...jb,...ja->...ab", tr, jac)
        + np.einsum("...i,...ij,...jab->...ab", r, jac, tens)
    )
    hess = 2.0 * np.einsum("...ia,...ib->...ab", big_r, big_r) + 2.0 * second
    return phi, grad, hess


def linear_analytic_solution(model: LinearModel, c1: float, c2: float, t):
    """General solution ``c1 e^{-lam t} (1, 1) + c2 e^{-(lam+gamma) t} (1, -1)``."""
    t = np.asarray(t, dtype=float)
    slow = c1 * np.exp(-model.lam * t)
    fast = c2 * np.exp(-(model.lam + model.gamma) * t)
    return np.stack([slow + fast, slow - fast], axis=-1)


def ds_analytic_solution(model: DavisSkodjeModel, c1: float, c2: float, t):
    """General solution ``(c1 e^{-t}, c2 e^{-gamma t} + c1/(c1 + e^t))``."""
    t = np.asarray(t, dtype=float)
    denom = c1 + np.exp(t)
    if np.any(denom == 0.0):
        raise SingularityError("c1 + exp(t) vanishes")
    x1 = c1 * np.exp(-t)
    x2 = c2 * np.exp(-model.gamma * t) + c1 / denom
    return np.stack([x1, x2], axis=-1)
