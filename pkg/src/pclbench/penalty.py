"""Penalty-method baseline: minimize ``L(u) + lam * ||F(theta, u)||^2`` over ``(theta, u)``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .jacprop import FieldDomainError
from .pcl import ConstraintSystem, NewtonSettings, newton_solve


@dataclass(frozen=True)
class Packing:
    """Joint variable layout ``z = (theta, u)``."""

    dim_theta: int
    dim_u: int

    @property
    def size(self) -> int:
        return self.dim_theta + self.dim_u

    def pack(self, theta, u) -> np.ndarray:
        return np.concatenate([np.asarray(theta, dtype=float), np.asarray(u, dtype=float)])

    def unpack(self, z) -> tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.size,):
            raise ValueError(f"joint variable has length {z.shape}, expected {self.size}")
        return z[: self.dim_theta], z[self.dim_theta:]


@dataclass
class PenaltyProblem:
    system: ConstraintSystem
    loss: object
    lam: float

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("penalty weight must be nonnegative")
        self.packing = Packing(self.system.dim_theta, self.system.dim_u)

    def initial_point(self, theta0, u_guess, newton: NewtonSettings | None = None) -> np.ndarray:
        """``(theta0, u)`` with ``u`` solving the constraint at ``theta0``."""
        u = newton_solve(self.system, theta0, u_guess, newton).u
        return self.packing.pack(theta0, u)


def penalty_loss_and_grad(problem: PenaltyProblem, z) -> tuple[float, np.ndarray]:
    theta, u = problem.packing.unpack(z)
    system, lam = problem.system, problem.lam
    try:
        with np.errstate(all="ignore"):
            F, J = system.evaluate(theta, u)
    except FieldDomainError:
        return np.inf, np.zeros(problem.packing.size)
    L, dLdu = problem.loss(u)
    value = L + lam * float(F @ F)
    if not np.isfinite(value):
        return np.inf, np.zeros(problem.packing.size)
    g_u = dLdu + 2.0 * lam * (J.T @ F)
    if lam == 0.0:
        g_theta = np.zeros(system.dim_theta)
    else:
        g_theta = 2.0 * lam * np.asarray(system.theta_pullback(theta, u, F), dtype=float)
    return float(value), np.concatenate([g_theta, g_u])
