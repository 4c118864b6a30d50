"""Compressed-sparse-row matrices and a direct LU solver.

Storage and factorization are delegated to :mod:`scipy.sparse` (CSR) and
SuperLU. :class:`SparseMatrix` keeps the canonical CSR form: sorted column
indices within each row and duplicates summed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

PIVOT_THRESHOLD = 1e-14


class DimensionError(ValueError):
    pass


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class SparseMatrix:
    """Immutable CSR matrix."""

    __slots__ = ("csr",)

    def __init__(self, data):
        m = sp.csr_matrix(data, dtype=float)
        m.sum_duplicates()
        m.sort_indices()
        m.eliminate_zeros()
        self.csr = m

    @classmethod
    def from_coo(cls, rows, cols, values, shape) -> "SparseMatrix":
        return cls(sp.coo_matrix((values, (rows, cols)), shape=shape))

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls(sp.identity(n, format="csr"))

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "SparseMatrix":
        return cls(sp.csr_matrix((rows, cols)))

    @classmethod
    def diag(cls, d) -> "SparseMatrix":
        return cls(sp.diags(np.asarray(d, dtype=float), format="csr"))

    @property
    def shape(self) -> tuple[int, int]:
        return self.csr.shape

    @property
    def rows(self) -> int:
        return self.csr.shape[0]

    @property
    def cols(self) -> int:
        return self.csr.shape[1]

    @property
    def row_offsets(self) -> np.ndarray:
        return self.csr.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self.csr.indices

    @property
    def values(self) -> np.ndarray:
        return self.csr.data

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def to_dense(self) -> np.ndarray:
        return self.csr.toarray()

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.csr.indptr)

    def pattern(self) -> sp.csr_matrix:
        """Boolean structure (ones at stored positions)."""
        p = self.csr.copy()
        p.data = np.ones_like(p.data)
        return p

    def norm_inf(self) -> float:
        if self.nnz == 0:
            return 0.0
        return float(abs(self.csr).sum(axis=1).max())

    def __matmul__(self, other):
        if isinstance(other, SparseMatrix):
            if self.cols != other.rows:
                raise DimensionError(f"cannot multiply {self.shape} by {other.shape}")
            return SparseMatrix(self.csr @ other.csr)
        return spmv(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, s):
        return scale(self, s)

    __rmul__ = __mul__

    @property
    def T(self) -> "SparseMatrix":
        return transpose(self)

    def __repr__(self):
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


def _check_vector(A: SparseMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != A.cols:
        raise DimensionError(f"vector of length {x.shape[0]} does not match {A.shape}")
    return x


def spmv(A: SparseMatrix, x) -> np.ndarray:
    return A.csr @ _check_vector(A, x)


def transpose(A: SparseMatrix) -> SparseMatrix:
    return SparseMatrix(A.csr.T)


def add(A: SparseMatrix, B: SparseMatrix) -> SparseMatrix:
    if A.shape != B.shape:
        raise DimensionError(f"cannot add {A.shape} and {B.shape}")
    return SparseMatrix(A.csr + B.csr)


def scale(A: SparseMatrix, s: float) -> SparseMatrix:
    return SparseMatrix(A.csr * float(s))


def diag_left_mul(d, A: SparseMatrix) -> SparseMatrix:
    """Scale row ``i`` of ``A`` by ``d[i]``."""
    d = np.asarray(d, dtype=float)
    if d.shape != (A.rows,):
        raise DimensionError(f"diagonal of length {d.shape} does not match {A.rows} rows")
    out = A.csr.copy()
    out.data = out.data * np.repeat(d, np.diff(out.indptr))
    return SparseMatrix(out)


def hstack(A: SparseMatrix, B: SparseMatrix) -> SparseMatrix:
    if A.rows != B.rows:
        raise DimensionError(f"row counts differ: {A.rows} vs {B.rows}")
    return SparseMatrix(sp.hstack([A.csr, B.csr]))


def vstack(A: SparseMatrix, B: SparseMatrix) -> SparseMatrix:
    if A.cols != B.cols:
        raise DimensionError(f"column counts differ: {A.cols} vs {B.cols}")
    return SparseMatrix(sp.vstack([A.csr, B.csr]))


def select_rows(A: SparseMatrix, rows) -> SparseMatrix:
    return SparseMatrix(A.csr[np.asarray(rows, dtype=np.intp)])


@dataclass(frozen=True)
class LUFactors:
    """``P A Q = L U`` with row permutation ``P`` and column ordering ``Q``.

    ``permutation`` maps original rows to factor rows (SuperLU ``perm_r``);
    ``column_permutation`` is the fill-reducing column order (``perm_c``).
    """

    permutation: np.ndarray
    column_permutation: np.ndarray
    L: SparseMatrix
    U: SparseMatrix
    shape: tuple[int, int]
    _lu: object

    def residual_norm(self, A: SparseMatrix) -> float:
        n = self.shape[0]
        P = sp.csr_matrix((np.ones(n), (self.permutation, np.arange(n))), shape=(n, n))
        Q = sp.csr_matrix((np.ones(n), (np.arange(n), self.column_permutation)), shape=(n, n))
        R = P @ A.csr @ Q - self.L.csr @ self.U.csr
        return float(abs(R).sum(axis=1).max()) if R.nnz else 0.0


def factorize(A: SparseMatrix) -> LUFactors:
    """Sparse LU with partial (row) pivoting.

    Raises :class:`SingularMatrixError` when SuperLU hits an exact zero pivot
    or when a pivot falls below ``1e-14 * ||A||_inf``.
    """
    if A.rows != A.cols:
        raise DimensionError(f"factorize needs a square matrix, got {A.shape}")
    n = A.rows
    anorm = A.norm_inf()
    if n == 0:
        raise DimensionError("empty matrix")
    if anorm == 0.0:
        raise SingularMatrixError("zero matrix")
    try:
        lu = spla.splu(A.csr.tocsc(), diag_pivot_thresh=1.0,
                       options={"SymmetricMode": False})
    except RuntimeError as exc:
        raise SingularMatrixError(str(exc)) from exc
    U = SparseMatrix(lu.U)
    pivots = np.abs(lu.U.diagonal())
    if pivots.min() <= PIVOT_THRESHOLD * anorm:
        raise SingularMatrixError(
            f"pivot {pivots.min():.3e} below threshold {PIVOT_THRESHOLD * anorm:.3e}")
    return LUFactors(np.asarray(lu.perm_r), np.asarray(lu.perm_c),
                     SparseMatrix(lu.L), U, A.shape, lu)


def solve(f: LUFactors, b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.shape[0]:
        raise DimensionError(f"rhs of length {b.shape[0]} for a {f.shape} system")
    return f._lu.solve(b)


def solve_transpose(f: LUFactors, b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.shape[0]:
        raise DimensionError(f"rhs of length {b.shape[0]} for a {f.shape} system")
    return f._lu.solve(b, trans="T")
