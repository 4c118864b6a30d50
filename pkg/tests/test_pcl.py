import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pclbench import autodiff as ad
from pclbench import benchmarks as bm
from pclbench.nn import init_params
from pclbench.pcl import (ConstraintSystem, NewtonError, NewtonSettings, PCLProblem, adjoint_gradient,
                          direct_sensitivity_gradient, least_squares_loss, linear_case_gradients,
                          loss_and_grad, newton_solve)
from pclbench.selftest import gradient_fd_error
from pclbench.sparse import SingularMatrixError, SparseMatrix


def scaled_rhs_system(A, y):
    """``F(theta, u) = A u - theta y`` with the theta pullback taken on a tape."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))

    def pullback(theta, u, w):
        tape = ad.Tape()
        th = tape.input(np.asarray(theta, dtype=float))
        F = tape.constant(A @ u) - th * y
        return ad.reverse_grad(tape, output=ad.dot(F, w).index)

    return ConstraintSystem(residual=lambda th, u: A @ u - th[0] * y,
                            jacobian_u=lambda th, u: SparseMatrix(A),
                            theta_pullback=pullback, dim_u=y.size, dim_theta=1)


def model_problem(A, y):
    u0 = np.linalg.solve(np.atleast_2d(A), np.atleast_1d(y))
    return PCLProblem(scaled_rhs_system(A, y), least_squares_loss(u0), np.zeros(u0.size)), u0


def test_model_problem_closed_form():
    prob, u0 = model_problem([[2.0]], [4.0])
    L, g = loss_and_grad(prob, np.array([2.0]))
    assert L == pytest.approx(4.0, rel=1e-14)
    assert g[0] == pytest.approx(8.0, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(theta=st.floats(-5, 5), seed=st.integers(0, 10 ** 6))
def test_linear_quadratic_matches_closed_form(theta, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(4, 4)) + 6 * np.eye(4)
    prob, u0 = model_problem(A, rng.normal(size=4))
    L, g = loss_and_grad(prob, np.array([theta]))
    n2 = u0 @ u0
    assert L == pytest.approx((theta - 1) ** 2 * n2, rel=1e-9, abs=1e-12)
    assert g[0] == pytest.approx(2 * (theta - 1) * n2, rel=1e-9, abs=1e-12)


def test_zero_gradient_when_data_matched():
    prob, _ = model_problem([[2.0]], [4.0])
    L, g = loss_and_grad(prob, np.array([1.0]))
    assert L == 0.0 and g[0] == 0.0


def test_repeated_calls_bit_identical():
    prob, _ = model_problem(np.diag([1.0, 2.0, 3.0]), [1.0, 1.0, 1.0])
    a = loss_and_grad(prob, np.array([0.3]))
    b = loss_and_grad(prob, np.array([0.3]))
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


def test_one_transpose_solve_per_gradient():
    prob, _ = model_problem(np.diag([1.0, 2.0, 3.0]), [1.0, 1.0, 1.0])
    for k in range(1, 4):
        loss_and_grad(prob, np.array([0.1 * k]))
        assert prob.counters["transpose_solves"] == k


# -- Newton ----------------------------------------------------------------

def test_newton_affine_one_step():
    sysm = scaled_rhs_system(np.array([[3.0, 1.0], [1.0, 2.0]]), [1.0, -1.0])
    res = newton_solve(sysm, np.array([2.0]), np.zeros(2))
    assert res.iterations == 1


def test_newton_quadratic_decay():
    sysm = ConstraintSystem(residual=lambda th, u: u ** 2 - 4.0,
                            jacobian_u=lambda th, u: SparseMatrix(np.diag(2 * u)),
                            theta_pullback=lambda th, u, w: np.zeros(0), dim_u=1, dim_theta=0)
    res = newton_solve(sysm, np.zeros(0), np.array([3.0]), NewtonSettings(residual_tol=1e-14))
    assert res.u[0] == pytest.approx(2.0, abs=1e-14)
    errs = [abs(u[0] - 2.0) for u in res.iterates]
    ratios = [e1 / e0 ** 2 for e0, e1 in zip(errs, errs[1:]) if e0 > 1e-7]
    assert len(ratios) >= 2 and max(ratios) < 1.0  # hand iteration: ratios approach 1/4


def test_newton_poisson_1d():
    # source strength is free here; g = -1 keeps the solution O(1) from a zero start
    prob = bm.Poisson1DProblem(n=31, g=-1.0, diffusivity=lambda u: (0.1 + u * u, 2 * u))
    res = newton_solve(bm.poisson1d_system(prob), np.zeros(0), np.zeros(32))
    assert res.residual_norms[-1] <= 1e-10 and res.iterations <= 10


def test_newton_failures():
    singular = ConstraintSystem(residual=lambda th, u: np.array([1.0, 1.0]),
                                jacobian_u=lambda th, u: SparseMatrix(np.ones((2, 2))),
                                theta_pullback=None, dim_u=2, dim_theta=0)
    with pytest.raises(SingularMatrixError):
        newton_solve(singular, np.zeros(0), np.zeros(2))
    no_root = ConstraintSystem(residual=lambda th, u: u ** 2 + 1.0,
                               jacobian_u=lambda th, u: SparseMatrix(np.diag(2 * u + 1e-3)),
                               theta_pullback=None, dim_u=1, dim_theta=0)
    with pytest.raises(NewtonError) as info:
        newton_solve(no_root, np.zeros(0), np.array([0.5]), NewtonSettings(max_iters=5))
    assert info.value.best_u is not None and info.value.residual >= 1.0
    with pytest.raises(ValueError):
        NewtonSettings(residual_tol=0.0)


def test_failed_forward_gives_infinite_loss():
    no_root = ConstraintSystem(residual=lambda th, u: u ** 2 + th[0],
                               jacobian_u=lambda th, u: SparseMatrix(np.diag(2 * u + 1e-3)),
                               theta_pullback=lambda th, u, w: np.array([w.sum()]), dim_u=1, dim_theta=1)
    prob = PCLProblem(no_root, least_squares_loss([1.0]), np.array([1.0]), NewtonSettings(max_iters=5))
    L, g = loss_and_grad(prob, np.array([1.0]))
    assert L == np.inf and np.all(g == 0) and prob.counters["failures"] == 1


# -- gradient oracles -------------------------------------------------------

def test_linear_case_specialized_forms_agree():
    rng = np.random.default_rng(0)
    n, q = 6, 3
    A0 = rng.normal(size=(n, n)) + 8 * np.eye(n)
    dA = [rng.normal(size=(n, n)) for _ in range(q)]
    obs = rng.normal(size=n)

    def A_of(t2):
        return A0 + sum(t * D for t, D in zip(t2, dA))

    def pullback(theta, u, w):
        tape = ad.Tape()
        th = tape.input(theta)
        t1, t2 = ad.gather(th, np.arange(n)), ad.gather(th, np.arange(n, n + q))
        Au = tape.constant(A0 @ u)
        for k in range(q):
            Au = Au + ad.gather(t2, np.array([k] * n)) * (dA[k] @ u)
        return ad.reverse_grad(tape, output=ad.dot(t1 - Au, w).index)

    sysm = ConstraintSystem(residual=lambda th, u: th[:n] - A_of(th[n:]) @ u,
                            jacobian_u=lambda th, u: SparseMatrix(-A_of(th[n:])),
                            theta_pullback=pullback, dim_u=n, dim_theta=n + q)
    prob = PCLProblem(sysm, least_squares_loss(obs), np.zeros(n))
    theta = rng.normal(size=n + q) * 0.1
    L, g = loss_and_grad(prob, theta)
    u = np.linalg.solve(A_of(theta[n:]), theta[:n])
    p, qq = linear_case_gradients(A_of(theta[n:]), dA, 2 * (u - obs), u)
    assert np.allclose(g, np.concatenate([p, qq]), atol=1e-10)
    assert np.allclose(g, direct_sensitivity_gradient(prob, theta, u), atol=1e-10)


def test_poisson1d_adjoint_vs_differences():
    truth = bm.Poisson1DProblem(n=31, diffusivity=bm.poisson1d_true_diffusivity)
    u_obs = newton_solve(bm.poisson1d_system(truth), np.zeros(0), np.zeros(32)).u
    prob = bm.Poisson1DProblem(n=31)
    pcl = PCLProblem(bm.poisson1d_system(prob), bm.poisson1d_loss(prob, u_obs), np.zeros(32))
    rng = np.random.default_rng(1)
    for trial in range(2):
        theta = init_params(prob.mlp, trial, output_bias=1.0)
        coords = rng.choice(theta.size, 5, replace=False)
        assert gradient_fd_error(pcl, theta, coords, eps=1e-5) < 1e-5


def test_poisson1d_direct_vs_adjoint_small():
    truth = bm.Poisson1DProblem(n=7, diffusivity=bm.poisson1d_true_diffusivity)
    u_obs = newton_solve(bm.poisson1d_system(truth), np.zeros(0), np.zeros(8)).u
    prob = bm.Poisson1DProblem(n=7, width=5)
    pcl = PCLProblem(bm.poisson1d_system(prob), bm.poisson1d_loss(prob, u_obs), np.zeros(8))
    theta = init_params(prob.mlp, 0, output_bias=1.0)
    u = pcl.solve(theta)
    assert np.allclose(adjoint_gradient(pcl, theta, u), direct_sensitivity_gradient(pcl, theta, u),
                       rtol=1e-9, atol=1e-12)


def test_helmholtz_inverse_crime():
    prob = bm.HelmholtzProblem("square", 2, 0.5)
    _, h = bm.helmholtz_forward(prob)
    pcl = PCLProblem(prob.system(), prob.loss(h), np.zeros(prob.n), bm.helmholtz_newton(prob))
    L, g = loss_and_grad(pcl, bm.THETA_STAR)
    assert L <= 1e-20 and np.linalg.norm(g) <= 1e-8
