"""Quick oracle checks run by ``pclbench selftest``."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import jacprop as jp


def central_difference(f, x, eps: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps * max(1.0, abs(x[i]))
        g[i] = (f(x + e) - f(x - e)) / (2.0 * e[i])
    return g


def dense_jacobian_fd(F, u, eps: float = 1e-6) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    cols = []
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = eps
        cols.append((F(u + e) - F(u - e)) / (2.0 * eps))
    return np.column_stack(cols)


def nonlinear_diffusion_field(ops, u) -> jp.Field:
    """``div((1 + u^2) grad u)`` with its propagated Jacobian."""
    U = jp.from_coefficients(ops, u)
    kappa = jp.add_scalar(jp.square(U), 1.0)
    return jp.div(ops, jp.grad(ops, U) * kappa)


def check_tape(rel_tol: float = 1e-7) -> tuple[bool, float]:
    x0 = 0.7
    tape = ad.Tape()
    x = tape.input(np.array(x0))
    y = ad.exp(ad.sin(x * x))
    g = ad.reverse_grad(tape, output=y.index)[0]
    fd = central_difference(lambda v: np.exp(np.sin(v[0] ** 2)), np.array([x0]))[0]
    err = abs(g - fd) / abs(fd)
    return err < rel_tol, err


def check_jacobian(n: int = 8, tol: float = 1e-6, seed: int = 0) -> tuple[bool, float]:
    ops = jp.fd_grid_operators(n)
    u = np.random.default_rng(seed).uniform(-1, 1, n * n)
    J = nonlinear_diffusion_field(ops, u).jacobian.to_dense()
    Jfd = dense_jacobian_fd(lambda v: nonlinear_diffusion_field(ops, v).values, u)
    err = float(np.max(np.abs(J - Jfd)))
    return err < tol, err


def gradient_fd_error(pcl_problem, theta, coords, eps: float = 1e-6) -> float:
    from .pcl import loss_and_grad
    _, g = loss_and_grad(pcl_problem, theta)
    worst = 0.0
    for k in coords:
        e = np.zeros_like(theta)
        e[k] = eps * max(1.0, abs(theta[k]))
        fp, _ = loss_and_grad(pcl_problem, theta + e)
        fm, _ = loss_and_grad(pcl_problem, theta - e)
        fd = (fp - fm) / (2.0 * e[k])
        worst = max(worst, abs(g[k] - fd) / max(abs(fd), 1e-12 * max(1.0, np.abs(g).max())))
    return worst


def check_helmholtz_gradient(tol: float = 1e-5, seed: int = 0) -> tuple[bool, float]:
    from .benchmarks import THETA_STAR, HelmholtzProblem, helmholtz_forward, helmholtz_newton
    from .pcl import PCLProblem
    prob = HelmholtzProblem("square", 1, 0.5)
    _, h = helmholtz_forward(prob)
    pcl = PCLProblem(prob.system(), prob.loss(h), np.zeros(prob.n), helmholtz_newton(prob))
    rng = np.random.default_rng(seed)
    theta = THETA_STAR + rng.normal(size=6)
    err = gradient_fd_error(pcl, theta, range(6))
    return err < tol, err


def check_poisson1d_gradient(tol: float = 1e-5, seed: int = 0) -> tuple[bool, float]:
    from .benchmarks import Poisson1DProblem, poisson1d_loss, poisson1d_system, poisson1d_true_diffusivity
    from .nn import init_params
    from .pcl import PCLProblem, newton_solve
    truth = Poisson1DProblem(n=15, diffusivity=poisson1d_true_diffusivity)
    u_obs = newton_solve(poisson1d_system(truth), np.zeros(0), np.zeros(16)).u
    prob = Poisson1DProblem(n=15)
    pcl = PCLProblem(poisson1d_system(prob), poisson1d_loss(prob, u_obs), np.zeros(16))
    theta = init_params(prob.mlp, seed, output_bias=1.0)
    coords = np.random.default_rng(seed).choice(theta.size, 5, replace=False)
    err = gradient_fd_error(pcl, theta, coords)
    return err < tol, err


CHECKS = {
    "tape gradient vs central differences": check_tape,
    "propagated Jacobian vs dense differences": check_jacobian,
    "helmholtz adjoint gradient vs central differences": check_helmholtz_gradient,
    "poisson-1d adjoint gradient vs central differences": check_poisson1d_gradient,
}


def run_selftest(emit=print) -> bool:
    ok = True
    for name, check in CHECKS.items():
        passed, err = check()
        ok &= passed
        emit(f"{'PASS' if passed else 'FAIL'}  {name}  (max error {err:.2e})")
    return ok
