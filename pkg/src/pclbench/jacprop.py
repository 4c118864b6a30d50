"""Forward propagation of sparse Jacobians through field expressions.

A :class:`Field` is a vector of values at evaluation points together with
its Jacobian with respect to a coefficient vector ``c``. Operations build
new fields in forward order and apply the matching chain rule to the
Jacobian at the same time, so writing the residual is enough to get
``dF/dc``::

    u = from_coefficients(ops, c)
    F = div(ops, (1 + u * u) * grad(ops, u))
    F.jacobian        # sparse dF/dc

Differentiation operators act point-to-point. When the value map ``M`` is
the identity (finite differences on grid nodes) they are the stored ``M_x``,
``M_y``; otherwise the field is pulled back to coefficients through
``M^{-1}`` first.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .sparse import DimensionError, SparseMatrix, diag_left_mul

_trace: Optional[list] = None


@contextlib.contextmanager
def record_order():
    """Collect the names of field operations in the order they execute."""
    global _trace
    prev, _trace = _trace, []
    try:
        yield _trace
    finally:
        _trace = prev


def _log(name):
    if _trace is not None:
        _trace.append(name)


class FieldDomainError(ValueError):
    pass


class Field:
    """Point values and their sparse Jacobian w.r.t. the coefficients."""

    __slots__ = ("values", "jacobian")
    __array_priority__ = 100

    def __init__(self, values, jacobian: SparseMatrix):
        values = np.asarray(values, dtype=float)
        if not isinstance(jacobian, SparseMatrix):
            jacobian = SparseMatrix(jacobian)
        if values.shape != (jacobian.rows,):
            raise DimensionError(f"{values.shape[0]} values but Jacobian has {jacobian.rows} rows")
        self.values = values
        self.jacobian = jacobian

    @property
    def n_points(self) -> int:
        return self.values.shape[0]

    @property
    def n_coefficients(self) -> int:
        return self.jacobian.cols

    @classmethod
    def constant(cls, values, n_coefficients: int) -> "Field":
        values = np.asarray(values, dtype=float)
        return cls(values, SparseMatrix.zeros(values.shape[0], n_coefficients))

    def _coerce(self, other) -> "Field":
        if isinstance(other, Field):
            return other
        vals = np.broadcast_to(np.asarray(other, dtype=float), self.values.shape)
        return Field.constant(vals, self.n_coefficients)

    def __add__(self, o):
        if np.isscalar(o):
            return add_scalar(self, o)
        return add(self, self._coerce(o))

    __radd__ = __add__

    def __sub__(self, o):
        if np.isscalar(o):
            return add_scalar(self, -o)
        return sub(self, self._coerce(o))

    def __rsub__(self, o):
        if np.isscalar(o):
            return add_scalar(neg(self), o)
        return sub(self._coerce(o), self)

    def __mul__(self, o):
        if isinstance(o, VectorField):
            return o * self
        if np.isscalar(o):
            return scale(self, o)
        return mul(self, self._coerce(o))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        p = float(p)
        return unary(self, lambda v: v ** p, lambda v: p * v ** (p - 1.0), name="power")

    def __repr__(self):
        return f"Field(n_points={self.n_points}, n_coefficients={self.n_coefficients}, nnz={self.jacobian.nnz})"


@dataclass(frozen=True)
class VectorField:
    x_component: Field
    y_component: Field

    def __post_init__(self):
        a, b = self.x_component, self.y_component
        if a.n_points != b.n_points or a.n_coefficients != b.n_coefficients:
            raise DimensionError("vector field components disagree in shape")

    def __mul__(self, f):
        if np.isscalar(f):
            return VectorField(scale(self.x_component, f), scale(self.y_component, f))
        return VectorField(mul(self.x_component, f), mul(self.y_component, f))

    __rmul__ = __mul__


@dataclass
class DiscretizationOperators:
    """Coefficient-to-point maps of a discretization.

    ``M`` maps coefficients to point values, ``M_x``/``M_y`` to first
    derivatives and ``M_xx``/``M_xy``/``M_yy`` to second derivatives.
    ``div_x``/``div_y`` optionally override the point derivative used by
    :func:`div` (staggered finite differences).
    """

    M: SparseMatrix
    M_x: Optional[SparseMatrix] = None
    M_y: Optional[SparseMatrix] = None
    M_xx: Optional[SparseMatrix] = None
    M_xy: Optional[SparseMatrix] = None
    M_yy: Optional[SparseMatrix] = None
    div_x: Optional[SparseMatrix] = None
    div_y: Optional[SparseMatrix] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        shape = self.M.shape
        for name in ("M_x", "M_y", "M_xx", "M_xy", "M_yy"):
            op = getattr(self, name)
            if op is not None and op.shape != shape:
                raise DimensionError(f"{name} has shape {op.shape}, expected {shape}")

    @property
    def n_points(self) -> int:
        return self.M.rows

    @property
    def n_coefficients(self) -> int:
        return self.M.cols

    def _is_identity(self) -> bool:
        if "identity" not in self._cache:
            M = self.M
            self._cache["identity"] = (
                M.rows == M.cols and M.nnz == M.rows
                and np.array_equal(M.col_indices, np.arange(M.rows))
                and np.all(M.values == 1.0))
        return self._cache["identity"]

    def point_derivative(self, name: str) -> SparseMatrix:
        """Point-to-point derivative operator ``M_name @ M^{-1}``."""
        key = "D" + name
        if key not in self._cache:
            op = getattr(self, name, None)
            if op is None:
                raise ValueError(f"discretization provides no {name} operator")
            if self._is_identity():
                self._cache[key] = op
            else:
                if self.M.rows != self.M.cols:
                    raise ValueError("pullback through M needs a square value map")
                Minv = np.linalg.inv(self.M.to_dense())
                D = op.to_dense() @ Minv
                D[np.abs(D) < 1e-14 * max(1.0, np.abs(D).max())] = 0.0
                self._cache[key] = SparseMatrix(D)
        return self._cache[key]


def from_coefficients(ops: DiscretizationOperators, c) -> Field:
    c = np.asarray(c, dtype=float)
    if c.shape != (ops.n_coefficients,):
        raise DimensionError(f"{c.shape[0]} coefficients for a {ops.M.shape} value map")
    _log("from_coefficients")
    return Field(ops.M @ c, ops.M)


def derivative_of_coefficients(ops: DiscretizationOperators, c, which: str) -> Field:
    """Field of a stored derivative map applied to coefficients, e.g. ``"M_xx"``."""
    op = getattr(ops, which, None)
    if op is None:
        raise ValueError(f"discretization provides no {which} operator")
    c = np.asarray(c, dtype=float)
    _log(which)
    return Field(op @ c, op)


def apply(K: SparseMatrix, f: Field, name: str = "apply") -> Field:
    """Linear point map ``K f``."""
    if K.cols != f.n_points:
        raise DimensionError(f"operator {K.shape} cannot act on {f.n_points} points")
    _log(name)
    return Field(K @ f.values, K @ f.jacobian)


def grad(ops: DiscretizationOperators, f: Field) -> VectorField:
    Dx, Dy = ops.point_derivative("M_x"), ops.point_derivative("M_y")
    _log("grad")
    return VectorField(Field(Dx @ f.values, Dx @ f.jacobian),
                       Field(Dy @ f.values, Dy @ f.jacobian))


def div(ops: DiscretizationOperators, v: VectorField) -> Field:
    Dx = ops.div_x if ops.div_x is not None else ops.point_derivative("M_x")
    Dy = ops.div_y if ops.div_y is not None else ops.point_derivative("M_y")
    vx, vy = v.x_component, v.y_component
    _log("div")
    return Field(Dx @ vx.values + Dy @ vy.values, Dx @ vx.jacobian + Dy @ vy.jacobian)


def _check_same(f: Field, g: Field):
    if f.n_points != g.n_points or f.n_coefficients != g.n_coefficients:
        raise DimensionError("fields disagree in shape")


def mul(f: Field, g: Field) -> Field:
    _check_same(f, g)
    _log("mul")
    J = diag_left_mul(g.values, f.jacobian) + diag_left_mul(f.values, g.jacobian)
    return Field(f.values * g.values, J)


def unary(f: Field, phi: Callable, dphi: Callable, name: str = "unary") -> Field:
    with np.errstate(invalid="raise", divide="raise"):
        try:
            vals = np.asarray(phi(f.values), dtype=float)
            slope = np.asarray(dphi(f.values), dtype=float)
        except FloatingPointError as exc:
            raise FieldDomainError(f"{name}: value outside the function's domain") from exc
    if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(slope))):
        raise FieldDomainError(f"{name}: value outside the function's domain")
    _log(name)
    return Field(vals, diag_left_mul(np.broadcast_to(slope, f.values.shape), f.jacobian))


def add(f: Field, g: Field) -> Field:
    _check_same(f, g)
    _log("add")
    return Field(f.values + g.values, f.jacobian + g.jacobian)


def sub(f: Field, g: Field) -> Field:
    _check_same(f, g)
    _log("sub")
    return Field(f.values - g.values, f.jacobian - g.jacobian)


def neg(f: Field) -> Field:
    _log("neg")
    return Field(-f.values, -f.jacobian)


def add_scalar(f: Field, s: float) -> Field:
    _log("add_scalar")
    return Field(f.values + s, f.jacobian)


def scale(f: Field, s: float) -> Field:
    _log("scale")
    return Field(f.values * s, f.jacobian * s)


def restrict(f: Field, rows) -> Field:
    rows = np.asarray(rows, dtype=np.intp)
    _log("restrict")
    return Field(f.values[rows], SparseMatrix(f.jacobian.csr[rows]))


def square(f: Field) -> Field:
    return unary(f, np.square, lambda v: 2.0 * v, name="square")


def tanh(f: Field) -> Field:
    return unary(f, np.tanh, lambda v: 1.0 - np.tanh(v) ** 2, name="tanh")


def log(f: Field) -> Field:
    return unary(f, np.log, lambda v: 1.0 / v, name="log")


def fd_grid_operators(n: int, h: float | None = None) -> DiscretizationOperators:
    """Staggered finite differences on an ``n x n`` node grid.

    Nodes are ordered with ``x`` fastest (index ``i + n*j``). ``M`` is the
    identity, ``M_x``/``M_y`` are forward differences and ``div_x``/``div_y``
    backward differences, so ``div(grad u)`` is the 5-point Laplacian at
    interior nodes. Rows of a forward difference on the last column (and the
    backward difference on the first) are zero.
    """
    if h is None:
        h = 1.0 / (n - 1)
    fwd = sp.diags([-np.ones(n), np.ones(n - 1)], [0, 1], shape=(n, n), format="lil")
    fwd[n - 1, n - 1] = 0.0
    bwd = sp.diags([np.ones(n), -np.ones(n - 1)], [0, -1], shape=(n, n), format="lil")
    bwd[0, 0] = 0.0
    fwd = sp.csr_matrix(fwd) / h
    bwd = sp.csr_matrix(bwd) / h
    eye = sp.identity(n, format="csr")
    return DiscretizationOperators(
        M=SparseMatrix.identity(n * n),
        M_x=SparseMatrix(sp.kron(eye, fwd)),
        M_y=SparseMatrix(sp.kron(fwd, eye)),
        div_x=SparseMatrix(sp.kron(eye, bwd)),
        div_y=SparseMatrix(sp.kron(bwd, eye)),
    )


def grid_interior(n: int) -> np.ndarray:
    """Indices of interior nodes of an ``n x n`` grid (x fastest)."""
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    mask = (i > 0) & (i < n - 1) & (j > 0) & (j < n - 1)
    return np.flatnonzero(mask.ravel())
