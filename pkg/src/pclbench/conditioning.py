"""Condition number of the penalty least-squares system on a linear model problem.

For ``min ||u - u0||^2 + lam ||A u - theta y||^2`` the joint variable
``(u, theta)`` solves a least-squares problem with coefficient matrix

    A_lam = [[I, 0], [sqrt(lam) A, -sqrt(lam) y]]

whose condition number grows without bound in ``lam``; the study measures it
against ``cond(A)^2``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq


class RankDeficientError(np.linalg.LinAlgError):
    pass


def assemble_A_lambda(A, y, lam: float) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or y.shape != (n,):
        raise ValueError("A must be square and y must match its size")
    if not lam > 0:
        raise ValueError("penalty weight must be positive")
    s = math.sqrt(lam)
    out = np.zeros((2 * n, n + 1))
    out[:n, :n] = np.eye(n)
    out[n:, :n] = s * A
    out[n:, n] = -s * y
    return out


def jacobi_singular_values(M, tol: float = 1e-15, max_sweeps: int = 80) -> np.ndarray:
    """Singular values by one-sided (Hestenes) Jacobi rotations, descending."""
    U = np.array(M, dtype=float)
    if U.shape[0] < U.shape[1]:
        U = U.T.copy()
    n = U.shape[1]
    for _ in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                a = U[:, i] @ U[:, i]
                b = U[:, j] @ U[:, j]
                c = U[:, i] @ U[:, j]
                if abs(c) <= tol * math.sqrt(a * b) or c == 0.0:
                    continue
                rotated = True
                zeta = (b - a) / (2.0 * c)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                cs = 1.0 / math.sqrt(1.0 + t * t)
                sn = cs * t
                ui = U[:, i].copy()
                U[:, i] = cs * ui - sn * U[:, j]
                U[:, j] = sn * ui + cs * U[:, j]
        if not rotated:
            break
    return np.sort(np.linalg.norm(U, axis=0))[::-1]


def condition_number(M) -> float:
    sv = jacobi_singular_values(M)
    if sv[-1] <= 1e-14 * sv[0]:
        raise RankDeficientError("matrix does not have full column rank")
    return float(sv[0] / sv[-1])


@dataclass
class ConditioningStudy:
    A: np.ndarray
    y: np.ndarray
    lambdas: list = field(default_factory=lambda: [10.0 ** k for k in range(2, 11, 2)])


@dataclass
class TheoremRow:
    lam: float
    kappa_A_lambda: float
    kappa_A_squared: float

    @property
    def ratio(self) -> float:
        return self.kappa_A_lambda / self.kappa_A_squared


def verify_theorem(study: ConditioningStudy) -> list[TheoremRow]:
    lams = list(study.lambdas)
    if any(b <= a for a, b in zip(lams, lams[1:])):
        raise ValueError("lambdas must be increasing")
    k2 = condition_number(study.A) ** 2
    return [TheoremRow(lam, condition_number(assemble_A_lambda(study.A, study.y, lam)), k2)
            for lam in lams]


def write_csv(rows: list[TheoremRow], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "kappa_A_lambda", "kappa_A_squared", "ratio"])
        for r in rows:
            w.writerow([repr(r.lam), repr(r.kappa_A_lambda), repr(r.kappa_A_squared), repr(r.ratio)])


@dataclass
class SecularResult:
    B: np.ndarray
    poles: np.ndarray
    brackets: list
    roots: np.ndarray
    deflated: np.ndarray
    s_zero: bool
    positive_definite: bool

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.sort(np.concatenate([self.roots, self.poles[self.deflated]]))


def arrowhead_matrix(A, y, lam: float):
    """``B = [[I/lam + S^2, alpha], [alpha^T, s]]`` with ``alpha = -S U^T y``."""
    U, S, _ = np.linalg.svd(np.asarray(A, dtype=float))
    y = np.asarray(y, dtype=float)
    alpha = -S * (U.T @ y)
    n = len(S)
    B = np.zeros((n + 1, n + 1))
    B[:n, :n] = np.diag(S ** 2 + 1.0 / lam)
    B[:n, n] = B[n, :n] = alpha
    B[n, n] = y @ y
    return B, S, alpha


def secular_function(x, s, alpha, poles):
    return s - x - np.sum(alpha ** 2 / (poles - x))


def secular_check(A, y, lam: float, deflation_tol: float = 1e-14) -> SecularResult:
    """Eigenvalues of the arrowhead matrix as roots of its secular function.

    Each root is bracketed between consecutive poles ``sigma_i^2 + 1/lam``
    (and ``0`` / an upper bound at the ends); the sign change is checked
    before root finding. Components with ``alpha_i = 0`` deflate to the pole.
    """
    A = np.asarray(A, dtype=float)
    if not np.allclose(A, A.T) or np.linalg.eigvalsh(A).min() <= 0:
        raise ValueError("secular check requires a symmetric positive definite A")
    B, S, alpha = arrowhead_matrix(A, y, lam)
    s = float(B[-1, -1])
    poles_all = S ** 2 + 1.0 / lam
    scale = max(1.0, np.abs(alpha).max())
    deflated = np.abs(alpha) <= deflation_tol * scale
    order = np.argsort(poles_all[~deflated])
    poles = poles_all[~deflated][order]
    a = alpha[~deflated][order]

    def f(x):
        return secular_function(x, s, a, poles)

    upper = max(s, poles.max() if poles.size else 0.0) + float(a @ a) + 1.0
    edges = [-upper if s == 0 else 0.0] + list(poles) + [upper]
    brackets, roots = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi - lo <= 0:
            continue
        eps = 1e-13 * max(1.0, abs(hi))
        lo_e = lo + eps if lo in poles else lo
        hi_e = hi - eps if hi in poles else hi
        flo, fhi = f(lo_e), f(hi_e)
        while flo < 0 and lo in poles and eps > 1e-300:
            eps /= 16
            flo = f(lo + eps)
            lo_e = lo + eps
        while fhi > 0 and hi in poles and eps > 1e-300:
            eps /= 16
            fhi = f(hi - eps)
            hi_e = hi - eps
        if not (flo > 0 > fhi):
            raise RuntimeError(f"no sign change of the secular function on ({lo}, {hi})")
        brackets.append((lo, hi))
        roots.append(brentq(f, lo_e, hi_e, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500))
    roots = np.array(roots)
    eig = np.concatenate([roots, poles_all[deflated]])
    return SecularResult(B, poles_all, brackets, roots, deflated, s == 0.0, bool(eig.min() > 0))
