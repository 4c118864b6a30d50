import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pclbench.conditioning import (ConditioningStudy, RankDeficientError, arrowhead_matrix, assemble_A_lambda,
                                   condition_number, jacobi_singular_values, secular_check, secular_function,
                                   verify_theorem, write_csv)


def random_spd(n, seed):
    M = np.random.default_rng(seed).normal(size=(n, n))
    return M @ M.T + 0.5 * np.eye(n)


def test_assemble_small_case():
    assert np.array_equal(assemble_A_lambda([[2.0]], [4.0], 1.0), [[1.0, 0.0], [2.0, -4.0]])
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            assemble_A_lambda([[2.0]], [4.0], bad)


def test_assemble_blocks():
    rng = np.random.default_rng(0)
    A, y, lam = rng.normal(size=(5, 5)), rng.normal(size=5), 7.0
    M = assemble_A_lambda(A, y, lam)
    assert M.shape == (10, 6)
    assert np.array_equal(M[:5, :5], np.eye(5)) and np.all(M[:5, 5] == 0)
    assert np.allclose(M[5:], np.sqrt(lam) * np.hstack([A, -y[:, None]]))


def test_condition_number_examples():
    assert condition_number(np.eye(4)) == pytest.approx(1.0, rel=1e-14)
    assert condition_number(np.diag([1.0, 10.0])) == pytest.approx(10.0, rel=1e-14)
    with pytest.raises(RankDeficientError):
        condition_number(np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]]))


@settings(max_examples=30, deadline=None)
@given(m=st.integers(1, 12), n=st.integers(1, 8), seed=st.integers(0, 10 ** 6))
def test_singular_values_match_gram_oracle(m, n, seed):
    M = np.random.default_rng(seed).normal(size=(max(m, n), n))
    sv = np.sort(jacobi_singular_values(M))
    gram = np.sqrt(np.clip(np.linalg.eigvalsh(M.T @ M), 0, None))
    assert np.allclose(sv, gram, rtol=1e-8, atol=1e-10 * gram.max())


def test_condition_bound_examples():
    rows = verify_theorem(ConditioningStudy(np.diag([1.0, 2.0]), np.ones(2), [1e12]))
    assert rows[0].kappa_A_squared == pytest.approx(4.0) and rows[0].kappa_A_lambda >= 4.0
    for r in verify_theorem(ConditioningStudy(np.eye(3), np.ones(3), [1e-2, 1.0, 1e4])):
        assert r.kappa_A_squared == pytest.approx(1.0) and r.kappa_A_lambda >= 1.0
    with pytest.raises(ValueError):
        verify_theorem(ConditioningStudy(np.eye(2), np.ones(2), [10.0, 1.0]))


def test_condition_sweep_diag_1_to_10(tmp_path):
    rows = verify_theorem(ConditioningStudy(np.diag(np.arange(1.0, 11.0)), np.ones(10)))
    kappa = np.array([r.kappa_A_lambda for r in rows])
    assert np.all(np.diff(kappa) >= 0)
    assert kappa[0] < 1e3 < kappa[-1] and kappa[-1] >= 100.0
    assert kappa[-1] / kappa[0] >= 1e2
    write_csv(rows, tmp_path / "c.csv")
    with open(tmp_path / "c.csv") as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["lambda", "kappa_A_lambda", "kappa_A_squared", "ratio"]
    assert float(table[-1][1]) == rows[-1].kappa_A_lambda


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 8), seed=st.integers(0, 10 ** 6), loglam=st.floats(-2, 8))
def test_secular_roots_match_eigensolver(n, seed, loglam):
    A = random_spd(n, seed)
    y = np.random.default_rng(seed + 1).normal(size=n)
    res = secular_check(A, y, 10.0 ** loglam)
    direct = np.linalg.eigvalsh(res.B)
    assert np.allclose(res.eigenvalues, direct, rtol=1e-9, atol=1e-9 * direct.max())
    assert res.positive_definite
    # interlacing against the shifted squared singular values
    d = np.sort(res.poles)
    ev = np.sort(direct)
    tol = 1e-9 * ev.max()
    assert np.all(ev[:-1] <= d + tol) and np.all(d <= ev[1:] + tol)
    for lo, hi in res.brackets:
        assert lo < hi


def test_zero_coupling_is_block_diagonal():
    res = secular_check(np.diag([1.0, 2.0, 3.0]), np.zeros(3), 10.0)
    assert res.s_zero and not res.positive_definite
    assert np.allclose(res.eigenvalues, [0.0, 1.1, 4.1, 9.1])


def test_secular_function_tends_to_minus_infinity():
    A = random_spd(3, 0)
    y = np.ones(3)
    B, S, alpha = arrowhead_matrix(A, y, 5.0)
    poles = S ** 2 + 0.2
    s = y @ y
    x = s + alpha @ alpha + poles.max() + 1
    assert secular_function(x, s, alpha, poles) < 0
    assert secular_function(1e8, s, alpha, poles) < -1e7


def test_non_spd_rejected():
    with pytest.raises(ValueError):
        secular_check(np.array([[1.0, 2.0], [0.0, 1.0]]), np.ones(2), 1.0)
    with pytest.raises(ValueError):
        secular_check(-np.eye(2), np.ones(2), 1.0)
