"""Limited-memory BFGS with a strong-Wolfe line search.

Stops when the gradient norm or the relative change of the objective drops
below its tolerance, after ``max_iters`` accepted steps, or when the line
search cannot find an acceptable step. An infinite objective value (a failed
inner solve) is treated as a rejected trial step.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np


@dataclass
class LbfgsSettings:
    memory: int = 10
    grad_tol: float = 1e-12
    rel_f_tol: float = 1e-12
    max_iters: int = 1000
    c1: float = 1e-4
    c2: float = 0.9
    initial_step: float = 1.0
    max_line_search: int = 40

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.memory < 1:
            raise ValueError("memory must be positive")


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    grad_norm: float
    step_len: float
    aux: float = math.nan


@dataclass
class LineSearchLog:
    """Data needed to re-check the Wolfe conditions of an accepted step."""

    f0: float
    slope0: float
    alpha: float
    f: float
    slope: float
    evaluations: int


@dataclass
class OptimTrace:
    records: list[IterationRecord] = field(default_factory=list)
    line_searches: list[LineSearchLog] = field(default_factory=list)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def aux(self) -> np.ndarray:
        return np.array([r.aux for r in self.records])


class OptimResult(NamedTuple):
    x: np.ndarray
    trace: OptimTrace
    stop_reason: str


class History:
    """Curvature pairs ``(s, y)``; pairs with ``s.y <= 0`` are rejected."""

    def __init__(self, memory: int):
        self.pairs: deque = deque(maxlen=memory)
        self.skipped = 0

    def push(self, s, y) -> bool:
        sy = float(s @ y)
        if not sy > 1e-300 or not np.isfinite(sy):
            self.skipped += 1
            return False
        self.pairs.append((s, y, 1.0 / sy))
        return True

    def clear(self):
        self.pairs.clear()

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


def two_loop_direction(history, g) -> np.ndarray:
    """``-H g`` from the two-loop recursion, ``H0 = (s.y / y.y) I``."""
    q = np.array(g, dtype=float)
    pairs = [(s, y, rho) for s, y, rho in history if rho > 0 and np.isfinite(rho)]
    if not pairs:
        return -q
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = pairs[-1]
    q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


class _LineSearchFailure(Exception):
    pass


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating two points with slopes, or None."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    x = b - (b - a) * (db + d2 - d1) / denom
    return x if np.isfinite(x) else None


def strong_wolfe(phi, f0, slope0, alpha1, c1, c2, max_evals):
    """Bracketing + zoom search for a step satisfying the strong Wolfe conditions.

    ``phi(alpha)`` returns ``(f, slope, payload)``. Returns
    ``(alpha, f, slope, payload, evaluations)``.
    """
    evals = 0

    def call(a):
        nonlocal evals
        if evals >= max_evals:
            raise _LineSearchFailure("too many function evaluations")
        evals += 1
        return phi(a)

    def armijo_ok(a, f):
        return np.isfinite(f) and f <= f0 + c1 * a * slope0

    def curvature_ok(d):
        return abs(d) <= -c2 * slope0

    def zoom(lo, hi):
        # lo, hi: (alpha, f, slope); lo satisfies Armijo with the lowest f so far
        while True:
            a_lo, f_lo, d_lo = lo
            a_hi, f_hi, d_hi = hi
            width = a_hi - a_lo
            if abs(width) <= 1e-16 * max(1.0, abs(a_lo)):
                raise _LineSearchFailure("interval collapsed")
            trial = None
            if np.isfinite(f_hi) and np.isfinite(d_hi):
                trial = _cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi)
            lo_b, hi_b = sorted((a_lo + 0.1 * width, a_hi - 0.1 * width))
            if trial is None or not lo_b <= trial <= hi_b:
                trial = a_lo + 0.5 * width
            f, d, pay = call(trial)
            if not armijo_ok(trial, f) or f >= f_lo:
                hi = (trial, f, d)
            else:
                if curvature_ok(d):
                    return trial, f, d, pay
                if d * (a_hi - a_lo) >= 0:
                    hi = lo
                lo = (trial, f, d)

    prev = (0.0, f0, slope0)
    alpha = alpha1
    first = True
    while True:
        f, d, pay = call(alpha)
        if not armijo_ok(alpha, f) or (not first and f >= prev[1]):
            res = zoom(prev, (alpha, f, d))
            return res + (evals,)
        if curvature_ok(d):
            return alpha, f, d, pay, evals
        if d >= 0:
            res = zoom((alpha, f, d), prev)
            return res + (evals,)
        prev = (alpha, f, d)
        alpha *= 2.0
        first = False


def minimize(f_and_g: Callable, z0, settings: LbfgsSettings | None = None,
             aux: Optional[Callable[[np.ndarray], float]] = None,
             stop_when: Optional[Callable[[IterationRecord], bool]] = None) -> OptimResult:
    """Minimize ``f`` given ``f_and_g(z) -> (f, grad)``.

    ``aux(z)`` is recorded with every iteration (e.g. a parameter error);
    ``stop_when(record)`` may end the run early with reason ``"target"``.
    """
    s = settings or LbfgsSettings()
    z = np.array(z0, dtype=float)
    f, g = f_and_g(z)
    f = float(f)
    g = np.asarray(g, dtype=float)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")
    trace = OptimTrace()
    gnorm = float(np.linalg.norm(g))
    rec = IterationRecord(0, f, gnorm, 0.0, aux(z) if aux else math.nan)
    trace.records.append(rec)
    if gnorm < s.grad_tol:
        return OptimResult(z, trace, "grad_tol")
    if stop_when is not None and stop_when(rec):
        return OptimResult(z, trace, "target")

    hist = History(s.memory)
    k = 0
    while k < s.max_iters:
        d = two_loop_direction(hist, g)
        slope0 = float(g @ d)
        if not slope0 < 0:
            hist.clear()
            d = -g
            slope0 = float(g @ d)
        if len(hist) == 0:
            alpha1 = min(s.initial_step, 1.0 / max(float(np.linalg.norm(d)), 1e-300))
        else:
            alpha1 = s.initial_step

        def phi(a, d=d):
            fa, ga = f_and_g(z + a * d)
            fa = float(fa)
            if not np.isfinite(fa):
                return np.inf, np.nan, None
            ga = np.asarray(ga, dtype=float)
            return fa, float(ga @ d), ga

        try:
            alpha, f_new, slope, g_new, n_eval = strong_wolfe(
                phi, f, slope0, alpha1, s.c1, s.c2, s.max_line_search)
        except _LineSearchFailure:
            if len(hist):
                hist.clear()
                continue
            return OptimResult(z, trace, "line_search_failed")

        k += 1
        z_new = z + alpha * d
        hist.push(z_new - z, g_new - g)
        trace.line_searches.append(LineSearchLog(f, slope0, alpha, f_new, slope, n_eval))
        f_old, z, g = f, z_new, g_new
        f = f_new
        gnorm = float(np.linalg.norm(g))
        rec = IterationRecord(k, f, gnorm, float(alpha * np.linalg.norm(d)),
                              aux(z) if aux else math.nan)
        trace.records.append(rec)
        if gnorm < s.grad_tol:
            return OptimResult(z, trace, "grad_tol")
        denom = abs(f_old) if f_old != 0 else 1.0
        if abs(f - f_old) / denom < s.rel_f_tol:
            return OptimResult(z, trace, "rel_f_tol")
        if stop_when is not None and stop_when(rec):
            return OptimResult(z, trace, "target")
    return OptimResult(z, trace, "max_iters")
