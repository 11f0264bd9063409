"""Primal-dual interior-point solver for equality- and bound-constrained NLPs.

The problem object is duck-typed and must provide ``n_vars``,
``n_constraints``, ``lower``, ``upper`` and the callables ``objective``,
``gradient``, ``constraints``, ``jacobian`` (sparse) and
``hessian(z, multipliers, obj_factor)`` (sparse, full symmetric). Sign
convention for the Lagrangian: ``L = f + lam @ c - zl @ (z - l) - zu @ (u - z)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .collocation import NlpEvaluationError
from .models import ContractViolation

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max_iter"
ACCEPTABLE = "acceptable"
DIVERGED = "diverged"
SINGULAR = "singular"


@dataclass(frozen=True)
class SolverOptions:
    kkt_tolerance: float = 1e-8
    max_iterations: int = 300
    initial_barrier: float = 0.1
    regularization_floor: float = 1e-12
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-14
    penalty_margin: float = 0.1
    bound_push: float = 1e-9
    max_gradient: float = 100.0
    refinement_steps: int = 3
    # stop early once this many consecutive iterates sit below the looser level
    acceptable_tolerance: float = 1e-6
    acceptable_iterations: int = 15

    def __post_init__(self):
        for name in ("kkt_tolerance", "initial_barrier", "regularization_floor", "armijo",
                     "backtrack", "min_step", "bound_push", "max_gradient"):
            if not getattr(self, name) > 0:
                raise ContractViolation(f"solver option {name} must be positive")
        if not self.kkt_tolerance < 1 or self.max_iterations < 1 or not self.backtrack < 1:
            raise ContractViolation("need kkt_tolerance < 1, backtrack < 1 and max_iterations >= 1")
        if not self.acceptable_tolerance > 0 or self.acceptable_iterations < 1:
            raise ContractViolation("need acceptable_tolerance > 0 and acceptable_iterations >= 1")


@dataclass(frozen=True)
class KktResiduals:
    stationarity: float
    feasibility: float
    complementarity: float

    @property
    def overall(self) -> float:
        return max(self.stationarity, self.feasibility, self.complementarity)


@dataclass
class Multipliers:
    constraints: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


@dataclass
class SolveReport:
    status: str
    iterations: int
    stationarity: float
    feasibility: float
    complementarity: float
    objective: float
    objective_scale: float
    multipliers: Multipliers
    message: str = ""
    merit_history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    def summary(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "stationarity": self.stationarity,
            "feasibility": self.feasibility,
            "complementarity": self.complementarity,
            "objective": self.objective,
            "message": self.message,
        }


def kkt_residuals(nlp, z, multipliers: Multipliers, obj_factor: float = 1.0,
                  barrier: float = 0.0, s_max: float = 100.0) -> KktResiduals:
    """First-order optimality residuals at ``(z, multipliers)``.

    Each stationarity entry and each constraint residual is divided by the
    magnitude of the terms it sums (stationarity at least by the
    multiplier-size factor ``s_d``), so both stay meaningful when the
    trajectory spans many orders of magnitude.
    """
    z = np.asarray(z, dtype=float)
    lam, zl, zu = multipliers.constraints, multipliers.lower, multipliers.upper
    grad = obj_factor * nlp.gradient(z)
    jac = nlp.jacobian(z)
    c = nlp.constraints(z)
    lo, up = np.isfinite(nlp.lower), np.isfinite(nlp.upper)
    stat = grad + jac.T @ lam - zl + zu
    n_mult = len(lam) + lo.sum() + up.sum()
    s_d = max(s_max, (np.abs(lam).sum() + np.abs(zl).sum() + np.abs(zu).sum()) / max(n_mult, 1)) / s_max
    s_c = max(s_max, (np.abs(zl).sum() + np.abs(zu).sum()) / max(lo.sum() + up.sum(), 1)) / s_max
    feas = _relative_feasibility(jac, z, c)
    compl = 0.0
    if lo.any():
        compl = max(compl, float(np.max(np.abs(zl[lo] * (z[lo] - nlp.lower[lo]) - barrier))))
    if up.any():
        compl = max(compl, float(np.max(np.abs(zu[up] * (nlp.upper[up] - z[up]) - barrier))))
    # each entry relative to the terms it sums (but never below s_d): once
    # those reach O(1e2) a single ulp in z moves the gradient by more than
    # any fixed absolute tolerance
    terms = np.abs(grad) + abs(jac).T @ np.abs(lam) + np.abs(zl) + np.abs(zu)
    stat_norm = float(np.max(np.abs(stat) / np.maximum(s_d, terms))) if len(stat) else 0.0
    return KktResiduals(stat_norm, feas, compl / s_c)


def _relative_feasibility(jac, z, c) -> float:
    if len(c) == 0:
        return 0.0
    abs_jac = abs(jac)
    term_size = abs_jac @ np.abs(z)
    return float(np.max(np.abs(c) / np.maximum(1.0, term_size)))


class _Factorization:
    def __init__(self, matrix, n_refine):
        self.matrix = matrix
        self.lu = splu(matrix, permc_spec="MMD_AT_PLUS_A")
        self.n_refine = n_refine

    def solve(self, rhs):
        x = self.lu.solve(rhs)
        for _ in range(self.n_refine):
            r = rhs - self.matrix @ x
            if np.max(np.abs(r)) <= 1e-15 * max(1.0, np.max(np.abs(rhs))):
                break
            x = x + self.lu.solve(r)
        return x


class InteriorPointSolver:
    """One solve owns one instance: all scratch state lives on ``self``."""

    def __init__(self, nlp, options: SolverOptions | None = None):
        self.nlp = nlp
        self.opt = options or SolverOptions()
        self.n = nlp.n_vars
        self.m = nlp.n_constraints
        self.lo = np.isfinite(nlp.lower)
        self.up = np.isfinite(nlp.upper)
        self.has_bounds = bool(self.lo.any() or self.up.any())
        self._rng_probe = np.random.default_rng(20240611).standard_normal((self.n, max(self.n - self.m, 0)))
        self._last_delta_w = 0.0

    # -- helpers ----------------------------------------------------------
    def _barrier_value(self, z, mu):
        val = 0.0
        if self.lo.any():
            val -= mu * np.sum(np.log(z[self.lo] - self.nlp.lower[self.lo]))
        if self.up.any():
            val -= mu * np.sum(np.log(self.nlp.upper[self.up] - z[self.up]))
        return val

    def _barrier_gradient(self, z, mu):
        g = np.zeros(self.n)
        g[self.lo] -= mu / (z[self.lo] - self.nlp.lower[self.lo])
        g[self.up] += mu / (self.nlp.upper[self.up] - z[self.up])
        return g

    def _sigma(self, z, zl, zu):
        sig = np.zeros(self.n)
        sig[self.lo] += zl[self.lo] / (z[self.lo] - self.nlp.lower[self.lo])
        sig[self.up] += zu[self.up] / (self.nlp.upper[self.up] - z[self.up])
        return sig

    def _fraction_to_boundary(self, z, dz, tau):
        alpha = 1.0
        lo, up = self.lo, self.up
        if lo.any():
            neg = lo & (dz < 0)
            if neg.any():
                gap = z[neg] - self.nlp.lower[neg]
                alpha = min(alpha, float(np.min(-tau * gap / dz[neg])))
        if up.any():
            pos = up & (dz > 0)
            if pos.any():
                gap = self.nlp.upper[pos] - z[pos]
                alpha = min(alpha, float(np.min(tau * gap / dz[pos])))
        return alpha

    @staticmethod
    def _dual_fraction(v, dv, mask, tau):
        neg = mask & (dv < 0)
        if not neg.any():
            return 1.0
        return min(1.0, float(np.min(-tau * v[neg] / dv[neg])))

    def _factorize(self, w, jac, mu):
        """Factorize the KKT matrix, correcting inertia by diagonal shifts."""
        n, m = self.n, self.m
        floor = self.opt.regularization_floor
        delta_c = 0.0
        delta_w = 0.0
        first_shift = True
        for _ in range(60):
            kkt = sparse.bmat(
                [[w + delta_w * sparse.identity(n), jac.T], [jac, -delta_c * sparse.identity(m) if m else None]],
                format="csc",
            )
            try:
                fac = _Factorization(kkt, self.opt.refinement_steps)
            except RuntimeError:
                # structurally or numerically singular: regularize the constraint block first
                if delta_c == 0.0 and m:
                    delta_c = 1e-8 * max(mu, floor) ** 0.25
                    continue
                fac = None
            if fac is not None and self._inertia_ok(fac):
                self._last_delta_w = delta_w
                return fac, delta_w
            if delta_w == 0.0:
                delta_w = 1e-4 if self._last_delta_w == 0.0 else max(floor, self._last_delta_w / 3.0)
            else:
                delta_w *= 100.0 if first_shift else 8.0
                first_shift = False
            if delta_w > 1e40:
                break
        return None, delta_w

    def _inertia_ok(self, fac) -> bool:
        # the top-left block of K^{-1} is Z G^{-1} Z^T; probing it with random
        # directions reveals whether the reduced Hessian G is positive definite
        d = self._rng_probe.shape[1]
        if d == 0:
            return True
        rhs = np.zeros(self.n + self.m)
        cols = []
        for k in range(d):
            rhs[: self.n] = self._rng_probe[:, k]
            cols.append(fac.solve(rhs)[: self.n])
        probe = self._rng_probe.T @ np.column_stack(cols)
        if not np.all(np.isfinite(probe)):
            return False
        eig = np.linalg.eigvalsh(0.5 * (probe + probe.T))
        return bool(eig[0] > 0.0)

    # -- main loop ----------------------------------------------------------
    def solve(self, z0):
        nlp, opt = self.nlp, self.opt
        n, m = self.n, self.m
        z = np.array(z0, dtype=float)
        if z.shape != (n,) or not np.all(np.isfinite(z)):
            raise ContractViolation("initial guess must be finite with one entry per variable")
        lower, upper = nlp.lower, nlp.upper
        # push the start strictly inside the bounds
        push = opt.bound_push
        z[self.lo] = np.maximum(z[self.lo], lower[self.lo] + push * np.maximum(1.0, np.abs(lower[self.lo])))
        z[self.up] = np.minimum(z[self.up], upper[self.up] - push * np.maximum(1.0, np.abs(upper[self.up])))

        mu = opt.initial_barrier if self.has_bounds else 0.0
        lam = np.zeros(m)
        zl = np.where(self.lo, 1.0, 0.0)
        zu = np.where(self.up, 1.0, 0.0)
        if self.has_bounds:
            zl[self.lo] = mu / (z[self.lo] - lower[self.lo])
            zu[self.up] = mu / (upper[self.up] - z[self.up])
        penalty = 0.0
        history = []

        try:
            grad0 = nlp.gradient(z)
        except NlpEvaluationError as exc:
            return z, self._report(DIVERGED, 0, z, lam, zl, zu, 1.0, str(exc), history)
        gmax = float(np.max(np.abs(grad0))) if n else 0.0
        obj_scale = min(1.0, opt.max_gradient / gmax) if gmax > 0 else 1.0

        status, message = MAX_ITER, "iteration limit reached"
        it = 0
        n_acceptable = 0
        for it in range(opt.max_iterations + 1):
            try:
                grad = obj_scale * nlp.gradient(z)
                c = nlp.constraints(z)
                jac = nlp.jacobian(z)
            except NlpEvaluationError as exc:
                status, message = DIVERGED, str(exc)
                break
            mult = Multipliers(lam, zl, zu)
            res0 = kkt_residuals(nlp, z, mult, obj_scale, 0.0)
            if res0.overall <= opt.kkt_tolerance:
                status, message = CONVERGED, "KKT tolerance met"
                break
            n_acceptable = n_acceptable + 1 if res0.overall <= opt.acceptable_tolerance else 0
            if n_acceptable >= opt.acceptable_iterations:
                status, message = ACCEPTABLE, "stalled below the acceptable KKT level"
                break
            if it == opt.max_iterations:
                break
            if self.has_bounds:
                while kkt_residuals(nlp, z, mult, obj_scale, mu).overall <= 10.0 * mu and mu > opt.kkt_tolerance / 10.0:
                    mu = max(opt.kkt_tolerance / 10.0, mu / 10.0)
            tau = max(0.99, 1.0 - mu)

            try:
                hess = nlp.hessian(z, lam, obj_scale)
            except NlpEvaluationError as exc:
                status, message = DIVERGED, str(exc)
                break
            sigma = self._sigma(z, zl, zu)
            w = hess + sparse.diags(sigma)
            fac, delta_w = self._factorize(w, jac, mu)
            if fac is None:
                status, message = SINGULAR, "KKT matrix singular after maximal inertia correction"
                break
            grad_barrier = grad + self._barrier_gradient(z, mu)
            rhs = -np.concatenate([grad_barrier + jac.T @ lam, c])
            sol = fac.solve(rhs)
            dz, dlam = sol[:n], sol[n:]

            # dual steps for the bound multipliers
            dzl = np.zeros(n)
            dzu = np.zeros(n)
            lo, up = self.lo, self.up
            if lo.any():
                gap = z[lo] - lower[lo]
                dzl[lo] = mu / gap - zl[lo] - zl[lo] / gap * dz[lo]
            if up.any():
                gap = upper[up] - z[up]
                dzu[up] = mu / gap - zu[up] + zu[up] / gap * dz[up]

            # l1 merit penalty large enough for a descent direction
            c_norm = float(np.sum(np.abs(c)))
            curv = float(dz @ (w @ dz)) + delta_w * float(dz @ dz)
            if c_norm > 0:
                need = (grad_barrier @ dz + 0.5 * max(curv, 0.0)) / ((1.0 - opt.penalty_margin) * c_norm)
                penalty = max(penalty, need, float(np.max(np.abs(lam + dlam))) if m else 0.0)

            def merit(zz):
                f = obj_scale * nlp.objective(zz) + self._barrier_value(zz, mu)
                return f + penalty * float(np.sum(np.abs(nlp.constraints(zz))))

            phi0 = obj_scale * nlp.objective(z) + self._barrier_value(z, mu) + penalty * c_norm
            slope = float(grad_barrier @ dz) - penalty * c_norm
            # merit values carry rounding noise, dominated near feasibility by
            # cancellation in the constraint sums: tolerate that much increase
            eps = np.finfo(float).eps
            c_noise = eps * float(np.sum(abs(jac) @ np.abs(z))) if m else 0.0
            slack = 10.0 * (eps * abs(phi0) + penalty * c_noise)
            alpha = self._fraction_to_boundary(z, dz, tau)
            accepted = False
            soc_tried = False
            while alpha >= opt.min_step:
                trial = z + alpha * dz
                try:
                    phi = merit(trial)
                except (NlpEvaluationError, FloatingPointError):
                    phi = math.inf
                if np.isfinite(phi) and phi <= phi0 + opt.armijo * alpha * slope + slack:
                    accepted = True
                    break
                if not soc_tried and alpha == self._fraction_to_boundary(z, dz, tau) and np.isfinite(phi):
                    # second-order correction against the Maratos effect
                    soc_tried = True
                    try:
                        c_trial = nlp.constraints(trial)
                        corr = fac.solve(np.concatenate([np.zeros(n), -c_trial]))[:n]
                        alpha_soc = self._fraction_to_boundary(z, dz + corr, tau)
                        trial_soc = z + alpha_soc * (dz + corr)
                        phi_soc = merit(trial_soc)
                        if np.isfinite(phi_soc) and phi_soc <= phi0 + opt.armijo * alpha * slope + slack:
                            trial, phi, alpha, accepted = trial_soc, phi_soc, alpha_soc, True
                            dz = dz + corr
                            break
                    except (NlpEvaluationError, FloatingPointError):
                        pass
                alpha *= opt.backtrack
            if not accepted:
                # tiny steps: accept anyway when already nearly optimal, else stop
                if res0.overall <= 100.0 * opt.kkt_tolerance:
                    trial, phi, alpha = z + self._fraction_to_boundary(z, dz, tau) * dz, None, 1.0
                else:
                    status, message = DIVERGED, "line search failed"
                    break
            else:
                history.append((phi0, phi))
            alpha_z = min(self._dual_fraction(zl, dzl, lo, tau), self._dual_fraction(zu, dzu, up, tau))
            z = trial
            lam = lam + alpha * dlam
            zl = zl + alpha_z * dzl
            zu = zu + alpha_z * dzu
            self._safeguard_duals(z, zl, zu, mu)
            log.debug("iter %d: kkt=%.3e (stat %.1e feas %.1e compl %.1e) mu=%.1e alpha=%.3e delta_w=%.1e",
                      it, res0.overall, res0.stationarity, res0.feasibility, res0.complementarity,
                      mu, alpha, delta_w)

        return z, self._report(status, it, z, lam, zl, zu, obj_scale, message, history)

    def _safeguard_duals(self, z, zl, zu, mu, kappa=1e10):
        if mu <= 0:
            return
        lo, up = self.lo, self.up
        if lo.any():
            gap = z[lo] - self.nlp.lower[lo]
            zl[lo] = np.clip(zl[lo], mu / (kappa * gap), kappa * mu / gap)
        if up.any():
            gap = self.nlp.upper[up] - z[up]
            zu[up] = np.clip(zu[up], mu / (kappa * gap), kappa * mu / gap)

    def _report(self, status, it, z, lam, zl, zu, obj_scale, message, history):
        mult = Multipliers(lam, zl, zu)
        try:
            res = kkt_residuals(self.nlp, z, mult, obj_scale, 0.0)
            obj = float(self.nlp.objective(z))
        except NlpEvaluationError:
            res, obj = KktResiduals(math.inf, math.inf, math.inf), math.nan
        if status == CONVERGED and res.overall > self.opt.kkt_tolerance:
            status = MAX_ITER
        return SolveReport(status, it, res.stationarity, res.feasibility, res.complementarity,
                           obj, obj_scale, mult, message, history)


def solve(nlp, initial_guess, options: SolverOptions | None = None):
    """Solve ``nlp`` from ``initial_guess``; returns ``(z, SolveReport)``."""
    return InteriorPointSolver(nlp, options).solve(initial_guess)
