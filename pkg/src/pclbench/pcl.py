"""Physics constrained learning: solve the constraint, then differentiate.

For a discretized constraint ``F(theta, u) = 0`` and a data loss ``L(u)``,
the reduced loss ``L(G(theta))`` is minimized over ``theta`` alone. Each
evaluation runs Newton to convergence and gets the gradient from one
transpose solve plus one reverse sweep::

    (dF/du)^T w = (dL/du)^T
    grad = -d(w^T F(theta, u))/dtheta      # w held constant

``ConstraintSystem.theta_pullback`` supplies the last term; it must treat
``w`` and ``u`` as constants.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .jacprop import FieldDomainError
from .sparse import SingularMatrixError, SparseMatrix, factorize, solve, solve_transpose

log = logging.getLogger(__name__)


class NewtonError(RuntimeError):
    """Newton did not reach the residual tolerance."""

    def __init__(self, msg, best_u=None, residual=np.inf):
        super().__init__(msg)
        self.best_u = best_u
        self.residual = residual


@dataclass
class ConstraintSystem:
    """Discretized constraint ``F(theta, u) = 0``.

    ``residual_and_jacobian`` is optional; when given, Newton uses it to get
    both quantities from one forward pass.
    """

    residual: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jacobian_u: Callable[[np.ndarray, np.ndarray], SparseMatrix]
    theta_pullback: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    dim_u: int
    dim_theta: int
    residual_and_jacobian: Optional[Callable] = None

    def evaluate(self, theta, u):
        if self.residual_and_jacobian is not None:
            return self.residual_and_jacobian(theta, u)
        return self.residual(theta, u), self.jacobian_u(theta, u)


def tape_loss(build: Callable[[ad.Var], ad.Var]):
    """Wrap ``build(u_var) -> scalar Var`` as ``u -> (value, dL/du)``."""
    def loss(u):
        tape = ad.Tape()
        uv = tape.input(np.asarray(u, dtype=float))
        out = build(uv)
        return float(out.value), ad.reverse_grad(tape, output=out.index)
    return loss


def least_squares_loss(observed, mask=None, weight: float = 1.0):
    """``weight * sum_{i in mask} (u_i - observed_i)^2``."""
    observed = np.asarray(observed, dtype=float)
    idx = np.arange(observed.size) if mask is None else np.flatnonzero(mask)

    def build(u):
        r = ad.gather(u, idx) - observed[idx]
        return weight * ad.dot(r, r)
    return tape_loss(build)


@dataclass
class NewtonSettings:
    residual_tol: float = 1e-10
    max_iters: int = 50
    backtrack: float = 0.5
    max_halvings: int = 30

    def __post_init__(self):
        if self.residual_tol <= 0:
            raise ValueError("residual_tol must be positive")


@dataclass
class NewtonResult:
    u: np.ndarray
    iterations: int
    residual_norms: list[float]
    iterates: list[np.ndarray]


def _safe_residual(system, theta, u):
    try:
        with np.errstate(all="ignore"):
            r = system.residual(theta, u)
    except (FieldDomainError, FloatingPointError, ValueError):
        return None
    return r if np.all(np.isfinite(r)) else None


def newton_solve(system: ConstraintSystem, theta, u0, settings: NewtonSettings | None = None) -> NewtonResult:
    """Damped Newton on ``F(theta, .)`` until ``||F||_inf <= residual_tol``."""
    settings = settings or NewtonSettings()
    u = np.array(u0, dtype=float)
    iterates = [u.copy()]
    norms = []
    best_u, best_r = u.copy(), np.inf
    for k in range(settings.max_iters + 1):
        try:
            with np.errstate(all="ignore"):
                F, J = system.evaluate(theta, u)
        except FieldDomainError as exc:
            raise NewtonError(f"residual undefined at iterate {k}: {exc}", best_u, best_r) from exc
        rnorm = float(np.max(np.abs(F))) if F.size else 0.0
        if not np.isfinite(rnorm):
            raise NewtonError(f"non-finite residual at iterate {k}", best_u, best_r)
        norms.append(rnorm)
        if rnorm < best_r:
            best_u, best_r = u.copy(), rnorm
        if rnorm <= settings.residual_tol:
            return NewtonResult(u, k, norms, iterates)
        if k == settings.max_iters:
            break
        du = solve(factorize(J), -F)
        step = 1.0
        for _ in range(settings.max_halvings + 1):
            trial = u + step * du
            Ft = _safe_residual(system, theta, trial)
            if Ft is not None and np.max(np.abs(Ft)) < rnorm:
                break
            step *= settings.backtrack
        else:
            raise NewtonError(f"line search failed at iterate {k} (||F|| = {rnorm:.3e})", best_u, best_r)
        u = trial
        iterates.append(u.copy())
    raise NewtonError(f"no convergence in {settings.max_iters} iterations (||F|| = {best_r:.3e})",
                      best_u, best_r)


@dataclass
class PCLProblem:
    """Reduced problem ``min_theta L(G(theta))``.

    ``loss`` maps ``u`` to ``(L, dL/du)``. The last converged state is kept
    for warm starts; ``counters`` records solver work.
    """

    system: ConstraintSystem
    loss: Callable[[np.ndarray], tuple[float, np.ndarray]]
    initial_u: np.ndarray
    newton: NewtonSettings = field(default_factory=NewtonSettings)
    counters: dict = field(default_factory=lambda: {"newton_iters": 0, "forward_solves": 0,
                                                     "transpose_solves": 0, "failures": 0})
    _warm: Optional[np.ndarray] = field(default=None, repr=False)

    def solve(self, theta) -> np.ndarray:
        starts = [self._warm] if self._warm is not None else []
        starts.append(self.initial_u)
        err = None
        for u0 in starts:
            try:
                res = newton_solve(self.system, theta, u0, self.newton)
            except (NewtonError, SingularMatrixError) as exc:
                err = exc
                continue
            self.counters["forward_solves"] += 1
            self.counters["newton_iters"] += res.iterations
            self._warm = res.u
            return res.u
        raise err

    def reset(self):
        self._warm = None


def adjoint_gradient(problem: PCLProblem, theta, u_h) -> np.ndarray:
    """Gradient of the reduced loss at a converged state ``u_h``."""
    system = problem.system
    _, dLdu = problem.loss(u_h)
    J = system.jacobian_u(theta, u_h)
    w = solve_transpose(factorize(J), dLdu)
    problem.counters["transpose_solves"] += 1
    # w is a plain array here, so the pullback cannot see its theta-dependence
    return -np.asarray(system.theta_pullback(theta, u_h, w), dtype=float)


def loss_and_grad(problem: PCLProblem, theta) -> tuple[float, np.ndarray]:
    """Forward solve then adjoint gradient. Failed solves give ``(inf, 0)``."""
    theta = np.asarray(theta, dtype=float)
    try:
        u = problem.solve(theta)
        value, _ = problem.loss(u)
        g = adjoint_gradient(problem, theta, u)
    except (NewtonError, SingularMatrixError) as exc:
        problem.counters["failures"] += 1
        log.debug("forward solve failed at trial theta: %s", exc)
        return np.inf, np.zeros_like(theta)
    return float(value), g


def constraint_theta_jacobian(system: ConstraintSystem, theta, u) -> np.ndarray:
    """Dense ``dF/dtheta`` assembled row by row from pullbacks (small N only)."""
    rows = []
    for i in range(system.dim_u):
        e = np.zeros(system.dim_u)
        e[i] = 1.0
        rows.append(system.theta_pullback(theta, u, e))
    return np.array(rows)


def direct_sensitivity_gradient(problem: PCLProblem, theta, u_h) -> np.ndarray:
    """Right-to-left evaluation, ``-dL/du (dF/du)^{-1} dF/dtheta``.

    Costs one solve per parameter; kept as a cross-check for tiny problems.
    """
    system = problem.system
    _, dLdu = problem.loss(u_h)
    lu = factorize(system.jacobian_u(theta, u_h))
    dFdtheta = constraint_theta_jacobian(system, theta, u_h)
    z = np.column_stack([solve(lu, dFdtheta[:, k]) for k in range(system.dim_theta)])
    return -dLdu @ z


def linear_case_gradients(A, dA_dtheta2, dLdu, u) -> tuple[np.ndarray, np.ndarray]:
    """Gradients for ``F = theta1 - A(theta2) u`` from ``A^T p^T = dL/du^T``.

    Returns ``p = dL/dtheta1`` and ``q = dL/dtheta2`` with
    ``q_k = -p (dA/dtheta2_k) u``.
    """
    if not isinstance(A, SparseMatrix):
        A = SparseMatrix(A)
    p = solve_transpose(factorize(A), dLdu)
    q = np.array([-(p @ (dA @ u)) for dA in dA_dtheta2])
    return p, q
