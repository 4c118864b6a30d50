"""Benchmark problems: parametric Helmholtz on IGA meshes, NN-diffusivity Poisson
in 2D and 1D, each runnable with the reduced (pcl) or penalty (pm) method.
"""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from . import jacprop as jp
from .iga import CollocationSpace, build_collocation, builtin_mesh, elevate_linear, h_refine
from .nn import MLP, forward, forward_and_input_derivative, forward_on_tape, init_params
from .optimize import LbfgsSettings, OptimResult, minimize
from .pcl import (ConstraintSystem, NewtonSettings, PCLProblem, least_squares_loss, loss_and_grad,
                  newton_solve, tape_loss)
from .penalty import PenaltyProblem, penalty_loss_and_grad
from .sparse import SparseMatrix, diag_left_mul, factorize, solve

THETA_STAR = np.array([5.0, 0.0, 2.0, 0.0, 0.0, 0.0])


# -- traces -----------------------------------------------------------------

@dataclass
class TraceRow:
    iteration: int
    loss: float
    error: float
    grad_norm: float


@dataclass
class BenchmarkTrace:
    """Per-iteration records of one run plus what is needed for its summary."""

    rows: list[TraceRow]
    stop_reason: str
    config: dict = field(default_factory=dict)
    wall_time: float = 0.0
    theta: Optional[np.ndarray] = None

    @classmethod
    def from_result(cls, res: OptimResult, config: dict, wall_time: float, theta) -> "BenchmarkTrace":
        rows = [TraceRow(r.iteration, r.loss, r.aux, r.grad_norm) for r in res.trace.records]
        return cls(rows, res.stop_reason, dict(config), wall_time, np.asarray(theta, dtype=float))

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.error for r in self.rows])

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.rows])

    @property
    def iterations(self) -> int:
        return self.rows[-1].iteration if self.rows else 0

    @property
    def final_error(self) -> float:
        return self.rows[-1].error

    def first_iteration_below(self, target: float) -> Optional[int]:
        for r in self.rows:
            if r.error < target:
                return r.iteration
        return None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "loss", "error", "grad_norm"])
        for r in self.rows:
            w.writerow([r.iteration, repr(float(r.loss)), repr(float(r.error)), repr(float(r.grad_norm))])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    def summary(self) -> dict:
        return {"config": self.config, "stop_reason": self.stop_reason,
                "final_error": self.final_error, "final_loss": self.rows[-1].loss,
                "iterations": self.iterations, "wall_time": self.wall_time}

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)
            fh.write("\n")


def read_trace_csv(path) -> list[TraceRow]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        return [TraceRow(int(r["iteration"]), float(r["loss"]), float(r["error"]), float(r["grad_norm"]))
                for r in rd]


def _optimizer_settings(max_iters: int, memory: int) -> LbfgsSettings:
    return LbfgsSettings(memory=memory, max_iters=max_iters)


def _target_stop(target_error):
    if target_error is None:
        return None
    return lambda rec: rec.aux < target_error


# -- Helmholtz ----------------------------------------------------------------

def helmholtz_mesh(domain: str, refinement: int):
    """Built-in mesh, degree 2 in both directions, refined ``refinement`` times."""
    if refinement < 0:
        raise ValueError("refinement must be >= 0")
    if domain == "square":
        surf = builtin_mesh("square")
    elif domain == "pipe":
        # radial direction is linear in the table; collocation needs second derivatives
        surf = elevate_linear(builtin_mesh("pipe"), direction=0)
    else:
        raise ValueError(f"unknown domain {domain!r}")
    return h_refine(surf, times=refinement)


def g_features(points) -> np.ndarray:
    """Rows ``(x^2, xy, y^2, x, y, 1)`` so that ``g = features @ theta``."""
    x, y = points[:, 0], points[:, 1]
    return np.column_stack([x * x, x * y, y * y, x, y, np.ones_like(x)])


def helmholtz_error(theta) -> float:
    return float(np.linalg.norm(np.asarray(theta, dtype=float) - THETA_STAR))


@dataclass
class HelmholtzProblem:
    domain: str = "square"
    refinement: int = 3
    k: float = 0.5

    def __post_init__(self):
        if not self.k >= 0:
            raise ValueError("k must be nonnegative")
        self.space: CollocationSpace = build_collocation(helmholtz_mesh(self.domain, self.refinement),
                                                         second_derivatives=True)
        sp = self.space
        n = sp.size
        self.boundary_mask = np.zeros(n)
        self.boundary_mask[sp.boundary] = 1.0
        self.interior_mask = 1.0 - self.boundary_mask
        self.features = g_features(sp.points)
        ops = sp.ops
        self._laplace_rows = diag_left_mul(self.interior_mask, ops.M_xx + ops.M_yy)
        self._value_rows = diag_left_mul(self.boundary_mask, ops.M)
        self._interior_M = diag_left_mul(self.interior_mask, ops.M)
        self.rhs = self.boundary_mask.copy()
        self.dn = sp.normal_derivative_operator()

    @property
    def n(self) -> int:
        return self.space.size

    def g(self, theta) -> np.ndarray:
        return self.features @ np.asarray(theta, dtype=float)

    def matrix(self, theta) -> SparseMatrix:
        """Collocation matrix: ``Lap + k^2 g M`` on interior rows, ``M`` on boundary rows."""
        return self._laplace_rows + diag_left_mul(self.k ** 2 * self.g(theta), self._interior_M) + self._value_rows

    def residual_and_jacobian(self, theta, c):
        A = self.matrix(theta)
        return A @ np.asarray(c, dtype=float) - self.rhs, A

    def theta_pullback(self, theta, c, w) -> np.ndarray:
        """``d(w^T F)/dtheta`` with ``c`` and ``w`` constant, from the tape."""
        tape = ad.Tape()
        th = tape.input(np.asarray(theta, dtype=float))
        g = ad.matvec(self.features, th)
        mc = self._interior_M @ np.asarray(c, dtype=float)
        out = ad.dot(g, (self.k ** 2) * np.asarray(w, dtype=float) * mc)
        return ad.reverse_grad(tape, output=out.index)

    def system(self) -> ConstraintSystem:
        return ConstraintSystem(
            residual=lambda th, c: self.residual_and_jacobian(th, c)[0],
            jacobian_u=lambda th, c: self.matrix(th),
            theta_pullback=self.theta_pullback,
            dim_u=self.n, dim_theta=6,
            residual_and_jacobian=self.residual_and_jacobian)

    def loss(self, observed):
        """``(1/n_obs) sum (du/dn - h)^2`` over the boundary collocation points."""
        observed = np.asarray(observed, dtype=float)
        Dn = self.dn.csr
        scale = 1.0 / observed.size

        def build(c):
            r = ad.matvec(Dn, c) - observed
            return scale * ad.dot(r, r)
        return tape_loss(build)


def helmholtz_forward(problem: HelmholtzProblem, theta=THETA_STAR):
    """Solve ``A(theta) c = b``; return the coefficients and boundary ``du/dn``.

    A resonant ``k`` raises :class:`~pclbench.sparse.SingularMatrixError`.
    """
    c = solve(factorize(problem.matrix(theta)), problem.rhs)
    return c, problem.dn @ c


def helmholtz_newton(problem: HelmholtzProblem) -> NewtonSettings:
    # linear in c: one Newton step; the residual floor scales with the operator norm
    scale = problem._laplace_rows.norm_inf()
    return NewtonSettings(residual_tol=max(1e-10, 1e-13 * scale), max_iters=5)


def run_helmholtz(method: str = "pcl", domain: str = "square", refinement: int = 3, k: float = 0.5,
                  lam: Optional[float] = None, max_iters: int = 1000, memory: int = 10,
                  theta0=None, target_error: Optional[float] = None) -> BenchmarkTrace:
    """Recover ``theta`` from boundary normal derivatives generated at ``THETA_STAR``."""
    config = dict(benchmark="helmholtz", method=method, domain=domain, refinement=refinement,
                  k=k, lam=lam, max_iters=max_iters, memory=memory)
    t0 = time.perf_counter()
    prob = HelmholtzProblem(domain, refinement, k)
    _, h_obs = helmholtz_forward(prob, THETA_STAR)
    system, loss = prob.system(), prob.loss(h_obs)
    newton = helmholtz_newton(prob)
    settings = _optimizer_settings(max_iters, memory)
    if method == "pcl":
        theta0 = np.zeros(6) if theta0 is None else np.asarray(theta0, dtype=float)
        pcl = PCLProblem(system, loss, np.zeros(prob.n), newton)
        res = minimize(lambda th: loss_and_grad(pcl, th), theta0, settings,
                       aux=helmholtz_error, stop_when=_target_stop(target_error))
        theta = res.x
    elif method == "pm":
        if lam is None:
            raise ValueError("the penalty method needs lam")
        theta0 = np.ones(6) if theta0 is None else np.asarray(theta0, dtype=float)
        pm = PenaltyProblem(system, loss, lam)
        z0 = pm.initial_point(theta0, np.zeros(prob.n), newton)
        res = minimize(lambda z: penalty_loss_and_grad(pm, z), z0, settings,
                       aux=lambda z: helmholtz_error(z[:6]), stop_when=_target_stop(target_error))
        theta = res.x[:6]
    else:
        raise ValueError(f"unknown method {method!r}")
    return BenchmarkTrace.from_result(res, config, time.perf_counter() - t0, theta)


# -- diffusivity models -------------------------------------------------------

def test_function_set(set_id: int):
    """True ``(f1, f2)`` of a test set as ``u -> (f1, f1', f2, f2')``."""
    def pos(u):
        return np.maximum(u, 0.0)

    if set_id == 1:
        def fn(u):
            # negative u is outside the data range; clamp so the fractional powers stay real
            return (0.1 + pos(u) ** 3.1, 3.1 * pos(u) ** 2.1,
                    0.1 + pos(u) ** 3.5, 3.5 * pos(u) ** 2.5)
    elif set_id == 2:
        def fn(u):
            return 0.1 + 0.1 * np.cos(u), -0.1 * np.sin(u), 0.1 + 0.1 * np.sin(u), 0.1 * np.cos(u)
    elif set_id == 3:
        def fn(u):
            d = 1.0 + u * u
            return 0.1 + u ** 3, 3.0 * u * u, 0.1 + 0.1 / d, -0.2 * u / (d * d)
    elif set_id == 4:
        def fn(u):
            return 0.1 + u * u, 2.0 * u, 0.1 + np.maximum(0.0, u - 0.3), (u > 0.3).astype(float)
    else:
        raise ValueError(f"test function set must be 1-4, got {set_id}")

    def wrapped(u):
        u = np.asarray(u, dtype=float)
        return tuple(np.asarray(v, dtype=float) * np.ones_like(u) for v in fn(u))
    return wrapped


def error_points(n: int = 100, upper: float = 0.6) -> np.ndarray:
    return upper * np.arange(n) / (n - 1)


def nn_error_metric(mlp: MLP, theta, set_id: int) -> float:
    """Discrete L2 misfit of both network outputs against the true set on ``[0, 0.6]``."""
    u = error_points()
    f1, _, f2, _ = test_function_set(set_id)(u)
    out = forward(mlp, theta, u)
    return float(np.sqrt(np.sum((f1 - out[:, 0]) ** 2) + np.sum((f2 - out[:, 1]) ** 2)))


# -- 2D Poisson with NN diffusivity ---------------------------------------------

def _forward_average(n: int) -> tuple[SparseMatrix, SparseMatrix]:
    """Midpoint averages ``(u_i + u_{i+1})/2`` along x and y; last column/row keep ``u``."""
    import scipy.sparse as sps
    a = sps.lil_matrix((n, n))
    for i in range(n - 1):
        a[i, i] = a[i, i + 1] = 0.5
    a[n - 1, n - 1] = 1.0
    a = sps.csr_matrix(a)
    eye = sps.identity(n, format="csr")
    return SparseMatrix(sps.kron(eye, a)), SparseMatrix(sps.kron(a, eye))


def load_source_scales() -> dict:
    text = resources.files("pclbench").joinpath("data/poisson_sources.json").read_text()
    return {int(k): float(v) for k, v in json.loads(text)["source_scale"].items()}


@dataclass
class PoissonNNProblem:
    """``-div(diag(f1(u), f2(u)) grad u) = h`` on the unit square, ``u = 0`` on the boundary.

    Staggered finite differences on an ``n x n`` node grid; the fluxes use
    the diffusivity at midpoint-averaged ``u``. ``h = s sin(pi x) sin(pi y)``.
    """

    n: int = 31
    set_id: int = 1
    hidden_layers: int = 1
    source_scale: Optional[float] = None
    width: int = 20

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("grid needs at least 3 nodes per direction")
        if not 1 <= self.hidden_layers <= 5:
            raise ValueError("hidden_layers must be in 1..5")
        test_function_set(self.set_id)
        if self.source_scale is None:
            self.source_scale = load_source_scales()[self.set_id]
        n = self.n
        self.ops = jp.fd_grid_operators(n)
        self.avg_x, self.avg_y = _forward_average(n)
        self.interior = jp.grid_interior(n)
        mask = np.zeros(n * n)
        mask[self.interior] = 1.0
        self.mask = mask
        xs = np.linspace(0.0, 1.0, n)
        X, Y = np.meshgrid(xs, xs, indexing="xy")
        self.x, self.y = X.ravel(), Y.ravel()
        self.source_shape = np.sin(np.pi * self.x) * np.sin(np.pi * self.y)
        self.mlp = MLP.build(self.hidden_layers, width=self.width, n_out=2)

    @property
    def dim_u(self) -> int:
        return self.n * self.n

    @property
    def source(self) -> np.ndarray:
        return self.source_scale * self.source_shape

    def _residual(self, u, evaluate: Callable, source) -> tuple[np.ndarray, SparseMatrix]:
        ops = self.ops
        U = jp.from_coefficients(ops, u)
        ux = jp.apply(self.avg_x, U, "average_x")
        uy = jp.apply(self.avg_y, U, "average_y")
        f1, df1, f2, df2 = evaluate(ux.values, uy.values)
        F1 = jp.unary(ux, lambda v: f1, lambda v: df1, name="f1")
        F2 = jp.unary(uy, lambda v: f2, lambda v: df2, name="f2")
        G = jp.grad(ops, U)
        R = jp.neg(jp.div(ops, jp.VectorField(F1 * G.x_component, F2 * G.y_component))) - source
        F = self.mask * R.values + (1.0 - self.mask) * u
        J = diag_left_mul(self.mask, R.jacobian) + SparseMatrix.diag(1.0 - self.mask)
        return F, J

    def _residual_values(self, u, evaluate: Callable, source) -> np.ndarray:
        """Same residual as ``_residual`` without the Jacobian (for line searches)."""
        ops = self.ops
        f1, _, f2, _ = evaluate(self.avg_x @ u, self.avg_y @ u)
        qx = f1 * (ops.point_derivative("M_x") @ u)
        qy = f2 * (ops.point_derivative("M_y") @ u)
        R = -(ops.div_x @ qx + ops.div_y @ qy) - source
        return self.mask * R + (1.0 - self.mask) * u

    def nn_evaluator(self, theta):
        def evaluate(ux, uy):
            vx, dx = forward_and_input_derivative(self.mlp, theta, ux)
            vy, dy = forward_and_input_derivative(self.mlp, theta, uy)
            return vx[:, 0], dx[:, 0], vy[:, 1], dy[:, 1]
        return evaluate

    def true_evaluator(self):
        fn = test_function_set(self.set_id)

        def evaluate(ux, uy):
            f1, df1, _, _ = fn(ux)
            _, _, f2, df2 = fn(uy)
            return f1, df1, f2, df2
        return evaluate

    def residual_and_jacobian(self, theta, u):
        return self._residual(np.asarray(u, dtype=float), self.nn_evaluator(theta), self.source)

    def theta_pullback(self, theta, u, w) -> np.ndarray:
        """``d(w^T F)/dtheta``: only the two diffusivities depend on ``theta``."""
        u = np.asarray(u, dtype=float)
        wm = self.mask * np.asarray(w, dtype=float)
        ops = self.ops
        ax = -(ops.div_x.T @ wm) * (ops.M_x @ u)
        ay = -(ops.div_y.T @ wm) * (ops.M_y @ u)
        ux, uy = self.avg_x @ u, self.avg_y @ u
        N = u.size
        tape = ad.Tape()
        th = tape.input(np.asarray(theta, dtype=float))
        f1, f2 = forward_on_tape(self.mlp, th, np.concatenate([ux, uy]))
        zeros = np.zeros(N)
        out = ad.dot(f1, np.concatenate([ax, zeros])) + ad.dot(f2, np.concatenate([zeros, ay]))
        return ad.reverse_grad(tape, output=out.index)

    def system(self) -> ConstraintSystem:
        return ConstraintSystem(
            residual=lambda th, u: self._residual_values(np.asarray(u, dtype=float),
                                                         self.nn_evaluator(th), self.source),
            jacobian_u=lambda th, u: self.residual_and_jacobian(th, u)[1],
            theta_pullback=self.theta_pullback,
            dim_u=self.dim_u, dim_theta=self.mlp.n_params,
            residual_and_jacobian=self.residual_and_jacobian)

    def true_system(self, source=None) -> ConstraintSystem:
        """The same discretization with the true diffusivities (no parameters)."""
        src = self.source if source is None else source
        ev = self.true_evaluator()

        def rj(th, u):
            return self._residual(np.asarray(u, dtype=float), ev, src)
        def values(th, u):
            return self._residual_values(np.asarray(u, dtype=float), ev, src)
        return ConstraintSystem(residual=values, jacobian_u=lambda th, u: rj(th, u)[1],
                                theta_pullback=lambda th, u, w: np.zeros(0), dim_u=self.dim_u,
                                dim_theta=0, residual_and_jacobian=rj)

    def observations(self, theta=None, newton: NewtonSettings | None = None) -> np.ndarray:
        """Grid solution with the true set, or with the network at ``theta`` if given."""
        system = self.true_system() if theta is None else self.system()
        th = np.zeros(0) if theta is None else np.asarray(theta, dtype=float)
        return newton_solve(system, th, np.zeros(self.dim_u), newton).u

    def error(self, theta) -> float:
        return nn_error_metric(self.mlp, theta, self.set_id)


def calibrate_source_scale(set_id: int, n: int = 31, target_max: float = 0.55,
                           tol: float = 1e-6) -> float:
    """Bisection on ``s`` so that the true-set solution peaks at ``target_max``."""
    prob = PoissonNNProblem(n=n, set_id=set_id, source_scale=1.0)
    warm = {"u": np.zeros(prob.dim_u)}

    def peak(s):
        system = prob.true_system(source=s * prob.source_shape)
        u = newton_solve(system, np.zeros(0), warm["u"]).u
        warm["u"] = u
        return float(u.max())

    lo, hi = 0.0, 1.0
    while peak(hi) < target_max:
        lo, hi = hi, 2.0 * hi
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if peak(mid) < target_max:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


NN_OUTPUT_BIAS = 1.0


def run_poisson_nn(method: str = "pcl", set_id: int = 1, hidden_layers: int = 1,
                   lam: Optional[float] = None, seed: int = 0, n: int = 31, max_iters: int = 5000,
                   memory: int = 10, source_scale: Optional[float] = None,
                   target_error: Optional[float] = None) -> BenchmarkTrace:
    """Learn ``(f1, f2)`` from the full grid solution generated with the true set."""
    config = dict(benchmark="poisson-nn", method=method, set_id=set_id, hidden_layers=hidden_layers,
                  lam=lam, seed=seed, n=n, max_iters=max_iters, memory=memory)
    t0 = time.perf_counter()
    prob = PoissonNNProblem(n=n, set_id=set_id, hidden_layers=hidden_layers, source_scale=source_scale)
    config["source_scale"] = prob.source_scale
    u_obs = prob.observations()
    loss = least_squares_loss(u_obs)
    system = prob.system()
    theta0 = init_params(prob.mlp, seed, output_bias=NN_OUTPUT_BIAS)
    settings = _optimizer_settings(max_iters, memory)
    stop = _target_stop(target_error)
    if method == "pcl":
        pcl = PCLProblem(system, loss, np.zeros(prob.dim_u))
        res = minimize(lambda th: loss_and_grad(pcl, th), theta0, settings, aux=prob.error, stop_when=stop)
        theta = res.x
    elif method == "pm":
        if lam is None:
            raise ValueError("the penalty method needs lam")
        pm = PenaltyProblem(system, loss, lam)
        z0 = pm.initial_point(theta0, np.zeros(prob.dim_u))
        k = prob.mlp.n_params
        res = minimize(lambda z: penalty_loss_and_grad(pm, z), z0, settings,
                       aux=lambda z: prob.error(z[:k]), stop_when=stop)
        theta = res.x[:k]
    else:
        raise ValueError(f"unknown method {method!r}")
    return BenchmarkTrace.from_result(res, config, time.perf_counter() - t0, theta)


# -- 1D Poisson ------------------------------------------------------------------

@dataclass
class Poisson1DProblem:
    """``(f(u; theta) u')' = g`` on ``(0, 1)``, ``u(0) = u(1) = 0``, ``n`` intervals.

    ``f`` is a one-output network unless ``diffusivity`` supplies a fixed
    ``u -> (f, f')`` (then ``theta`` is empty).
    """

    n: int = 31
    g: float | np.ndarray = -4.0
    hidden_layers: int = 1
    diffusivity: Optional[Callable] = None
    observed: Optional[np.ndarray] = None
    width: int = 20

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("need at least 3 intervals")
        self.h = 1.0 / self.n
        self.x = np.arange(self.n + 1) / self.n
        self.g_values = np.broadcast_to(np.asarray(self.g, dtype=float), self.x.shape).copy()
        self.mlp = MLP.build(self.hidden_layers, width=self.width, n_out=1) if self.diffusivity is None else None
        if self.observed is None:
            self.observed = np.arange(self.n + 1)
        self.observed = np.asarray(self.observed, dtype=np.intp)

    @property
    def dim_u(self) -> int:
        return self.n + 1

    @property
    def dim_theta(self) -> int:
        return 0 if self.mlp is None else self.mlp.n_params

    def f(self, v, theta):
        if self.mlp is None:
            f, df = self.diffusivity(v)
            return np.asarray(f, dtype=float) * np.ones_like(v), np.asarray(df, dtype=float) * np.ones_like(v)
        val, dval = forward_and_input_derivative(self.mlp, theta, v)
        return val[:, 0], dval[:, 0]

    def _check(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim_u,):
            raise ValueError(f"u has shape {u.shape}, expected ({self.dim_u},)")
        return u


def poisson1d_residual(problem: Poisson1DProblem, theta, u) -> np.ndarray:
    u = problem._check(u)
    h2 = problem.h ** 2
    mid = 0.5 * (u[:-1] + u[1:])          # face e sits between nodes e and e+1
    fm, _ = problem.f(mid, theta)
    flux = fm * (u[1:] - u[:-1]) / h2
    F = np.empty_like(u)
    F[1:-1] = flux[1:] - flux[:-1] - problem.g_values[1:-1]
    F[0], F[-1] = u[0], u[-1]
    return F


def poisson1d_jacobian(problem: Poisson1DProblem, theta, u) -> SparseMatrix:
    """Tridiagonal ``dF/du`` including the ``f'`` terms; boundary rows are identity."""
    u = problem._check(u)
    h2 = problem.h ** 2
    N = u.size
    mid = 0.5 * (u[:-1] + u[1:])
    fm, dfm = problem.f(mid, theta)
    du = (u[1:] - u[:-1]) / h2
    i = np.arange(1, N - 1)
    # right face i: f(m_i) (u_{i+1} - u_i)/h^2 ; left face i-1 enters with a minus sign
    lower = -(0.5 * dfm[i - 1] * du[i - 1] - fm[i - 1] / h2)
    diag = 0.5 * dfm[i] * du[i] - fm[i] / h2 - (0.5 * dfm[i - 1] * du[i - 1] + fm[i - 1] / h2)
    upper = 0.5 * dfm[i] * du[i] + fm[i] / h2
    rows = np.concatenate([i, i, i, [0, N - 1]])
    cols = np.concatenate([i - 1, i, i + 1, [0, N - 1]])
    vals = np.concatenate([lower, diag, upper, [1.0, 1.0]])
    return SparseMatrix.from_coo(rows, cols, vals, (N, N))


def poisson1d_loss_grad_dLdu(problem: Poisson1DProblem, u, u_obs) -> np.ndarray:
    """``2 (u_i - u_obs_i)`` on observed nodes, zero elsewhere."""
    u = problem._check(u)
    g = np.zeros_like(u)
    idx = problem.observed
    g[idx] = 2.0 * (u[idx] - np.asarray(u_obs, dtype=float)[idx])
    return g


def poisson1d_theta_pullback(problem: Poisson1DProblem, theta, u, w) -> np.ndarray:
    if problem.mlp is None:
        return np.zeros(0)
    u = problem._check(u)
    wi = np.asarray(w, dtype=float).copy()
    wi[0] = wi[-1] = 0.0
    du = (u[1:] - u[:-1]) / problem.h ** 2
    # face e adds +f du to row e and -f du to row e+1
    a = du * (wi[:-1] - wi[1:])
    mid = 0.5 * (u[:-1] + u[1:])
    tape = ad.Tape()
    th = tape.input(np.asarray(theta, dtype=float))
    (f,) = forward_on_tape(problem.mlp, th, mid)
    out = ad.dot(f, a)
    return ad.reverse_grad(tape, output=out.index)


def poisson1d_system(problem: Poisson1DProblem) -> ConstraintSystem:
    return ConstraintSystem(
        residual=lambda th, u: poisson1d_residual(problem, th, u),
        jacobian_u=lambda th, u: poisson1d_jacobian(problem, th, u),
        theta_pullback=lambda th, u, w: poisson1d_theta_pullback(problem, th, u, w),
        dim_u=problem.dim_u, dim_theta=problem.dim_theta)


def poisson1d_loss(problem: Poisson1DProblem, u_obs):
    mask = np.zeros(problem.dim_u, dtype=bool)
    mask[problem.observed] = True
    return least_squares_loss(u_obs, mask)


def poisson1d_true_diffusivity(u):
    u = np.asarray(u, dtype=float)
    return 1.0 + u * u, 2.0 * u


def poisson1d_error(problem: Poisson1DProblem, theta, u_range: float) -> float:
    """Misfit of the learned ``f`` against ``1 + u^2`` on 100 points in ``[0, u_range]``."""
    u = error_points(100, u_range)
    f, _ = poisson1d_true_diffusivity(u)
    return float(np.sqrt(np.sum((f - forward(problem.mlp, theta, u)[:, 0]) ** 2)))


def run_poisson_1d(method: str = "pcl", n: int = 31, hidden_layers: int = 1, lam: Optional[float] = None,
                   seed: int = 0, max_iters: int = 2000, memory: int = 10, g: float = -4.0,
                   target_error: Optional[float] = None) -> BenchmarkTrace:
    """Learn ``f(u) = 1 + u^2`` from nodal observations with a one-output network."""
    config = dict(benchmark="poisson-1d", method=method, n=n, hidden_layers=hidden_layers, lam=lam,
                  seed=seed, max_iters=max_iters, memory=memory, g=g)
    t0 = time.perf_counter()
    truth = Poisson1DProblem(n=n, g=g, diffusivity=poisson1d_true_diffusivity)
    u_obs = newton_solve(poisson1d_system(truth), np.zeros(0), np.zeros(n + 1)).u
    prob = Poisson1DProblem(n=n, g=g, hidden_layers=hidden_layers)
    system, loss = poisson1d_system(prob), poisson1d_loss(prob, u_obs)
    u_range = float(u_obs.max())
    theta0 = init_params(prob.mlp, seed, output_bias=NN_OUTPUT_BIAS)
    settings = _optimizer_settings(max_iters, memory)
    stop = _target_stop(target_error)
    if method == "pcl":
        pcl = PCLProblem(system, loss, np.zeros(prob.dim_u))
        res = minimize(lambda th: loss_and_grad(pcl, th), theta0, settings,
                       aux=lambda th: poisson1d_error(prob, th, u_range), stop_when=stop)
        theta = res.x
    elif method == "pm":
        if lam is None:
            raise ValueError("the penalty method needs lam")
        pm = PenaltyProblem(system, loss, lam)
        z0 = pm.initial_point(theta0, np.zeros(prob.dim_u))
        k = prob.dim_theta
        res = minimize(lambda z: penalty_loss_and_grad(pm, z), z0, settings,
                       aux=lambda z: poisson1d_error(prob, z[:k], u_range), stop_when=stop)
        theta = res.x[:k]
    else:
        raise ValueError(f"unknown method {method!r}")
    return BenchmarkTrace.from_result(res, config, time.perf_counter() - t0, theta)
