import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pclbench.optimize import History, LbfgsSettings, minimize, two_loop_direction


def quadratic(H, b):
    return lambda z: (0.5 * z @ H @ z - b @ z, H @ z - b)


def rosenbrock(z):
    x, y = z
    f = (1 - x) ** 2 + 100 * (y - x * x) ** 2
    return f, np.array([-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])


def spd(n, seed):
    Q = np.linalg.qr(np.random.default_rng(seed).normal(size=(n, n)))[0]
    return Q @ np.diag(np.linspace(1, 10, n)) @ Q.T


def wolfe_ok(log, c1=1e-4, c2=0.9):
    armijo = log.f <= log.f0 + c1 * log.alpha * log.slope0 + 1e-12 * abs(log.f0)
    return armijo and abs(log.slope) <= c2 * abs(log.slope0)


def test_settings_validation():
    with pytest.raises(ValueError):
        LbfgsSettings(c1=0.9, c2=0.1)
    with pytest.raises(ValueError):
        LbfgsSettings(memory=0)


def test_convex_quadratic():
    H, b = spd(4, 0), np.arange(1.0, 5.0)
    res = minimize(quadratic(H, b), np.zeros(4), LbfgsSettings(grad_tol=1e-10, rel_f_tol=0.0))
    assert res.trace.records[-1].grad_norm < 1e-10
    assert len(res.trace.records) - 1 <= 20
    assert np.allclose(res.x, np.linalg.solve(H, b), atol=1e-9)


def test_rosenbrock():
    res = minimize(rosenbrock, np.array([-1.2, 1.0]), LbfgsSettings(max_iters=500))
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-7)
    assert res.trace.records[-1].loss < 1e-15


def test_constant_objective_stops_immediately():
    # the gradient of a constant is exactly zero, so the gradient test fires before any step
    res = minimize(lambda z: (3.0, np.zeros_like(z)), np.ones(3))
    assert res.stop_reason == "grad_tol" and len(res.trace.records) == 1
    assert np.array_equal(res.x, np.ones(3))


def test_flat_objective_with_nonzero_slope_stops_on_relative_change():
    # objective stops changing after the first step while the reported slope stays nonzero
    calls = []

    def f(z):
        calls.append(1)
        return (5.0 if len(calls) == 1 else 5.0 - 1e-15), np.ones_like(z) * (1.0 if len(calls) == 1 else 1e-3)

    res = minimize(f, np.zeros(2), LbfgsSettings(c2=0.99))
    assert res.stop_reason == "rel_f_tol" and res.trace.records[-1].iteration == 1


def test_max_iters_and_nonfinite_start():
    res = minimize(rosenbrock, np.array([-1.2, 1.0]), LbfgsSettings(max_iters=3))
    assert res.stop_reason == "max_iters" and res.trace.records[-1].iteration == 3
    with pytest.raises(ValueError):
        minimize(lambda z: (np.inf, z), np.zeros(2))


def test_infinite_trial_values_shrink_the_step():
    # objective undefined beyond |z| > 2: trial points there report +inf
    def f(z):
        if np.abs(z).max() > 2:
            return np.inf, np.zeros_like(z)
        return float((z - 1.5) @ (z - 1.5)), 2 * (z - 1.5)

    res = minimize(f, np.zeros(2), LbfgsSettings(initial_step=50.0))
    assert np.allclose(res.x, 1.5, atol=1e-6)


def test_target_stop_and_aux():
    res = minimize(rosenbrock, np.array([-1.2, 1.0]), aux=lambda z: np.linalg.norm(z - 1),
                   stop_when=lambda r: r.aux < 1e-2)
    assert res.stop_reason == "target" and res.trace.aux[-1] < 1e-2


def test_two_loop_empty_history():
    g = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(two_loop_direction(History(5), g), -g)


def test_two_loop_reproduces_newton_direction():
    n = 5
    H = spd(n, 1)
    hist = History(n)
    for s in np.linalg.eigh(H)[1].T:  # H-conjugate steps
        hist.push(s, H @ s)
    g = np.random.default_rng(2).normal(size=n)
    assert np.allclose(two_loop_direction(hist, g), -np.linalg.solve(H, g), atol=1e-8)


def test_non_curvature_pair_is_skipped():
    hist = History(3)
    assert hist.push(np.array([1.0, 0.0]), np.array([2.0, 0.0]))
    assert not hist.push(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    d = two_loop_direction(hist, np.array([1.0, 1.0]))
    assert np.all(np.isfinite(d)) and hist.skipped == 1


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(2, 8))
def test_accepted_steps_satisfy_wolfe_and_descend(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    c = rng.normal(size=n)

    def f(z):
        r = A @ z - c
        return float(np.sum(np.log(np.cosh(r))) + 0.1 * z @ z), A.T @ np.tanh(r) + 0.2 * z

    res = minimize(f, rng.normal(size=n), LbfgsSettings(max_iters=100))
    assert all(wolfe_ok(log) for log in res.trace.line_searches)
    losses = res.trace.losses
    assert np.all(np.diff(losses) <= 0)
    d = two_loop_direction(History(3), f(res.x)[1])
    assert f(res.x)[1] @ d <= 0
