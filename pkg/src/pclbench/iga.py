"""NURBS surfaces and isogeometric collocation at Greville points.

Control nets are indexed ``[i, j]`` with ``i`` running along the ``u``
(first) parametric direction. Flattened basis and collocation indices use
``k = i + n * j`` (``i`` fastest), the same order as the mesh files.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .jacprop import DiscretizationOperators
from .sparse import SparseMatrix, diag_left_mul, factorize, solve


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class KnotVector:
    knots: np.ndarray
    degree: int

    def __post_init__(self):
        U = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", U)
        p = int(self.degree)
        if p < 0 or U.ndim != 1 or len(U) < 2 * (p + 1):
            raise ValueError(f"knot vector of length {len(U)} too short for degree {p}")
        if np.any(np.diff(U) < 0):
            raise ValueError("knots must be nondecreasing")
        if U[0] != 0.0 or U[-1] != 1.0:
            raise ValueError("knots must span [0, 1]")
        if np.any(U[: p + 1] != 0.0) or np.any(U[-(p + 1):] != 1.0):
            raise ValueError("knot vector must be open (end multiplicity p+1)")

    @property
    def n(self) -> int:
        return len(self.knots) - self.degree - 1

    def span(self, x: float) -> int:
        """Index ``k`` with ``U[k] <= x < U[k+1]``; ``x = 1`` maps to the last span."""
        U, n = self.knots, self.n
        if not 0.0 <= x <= 1.0:
            raise ValueError(f"parameter {x} outside [0, 1]")
        if x >= U[n]:
            return n - 1
        return int(np.searchsorted(U, x, side="right") - 1)


def ders_basis_funs(kv: KnotVector, span: int, x: float, nders: int) -> np.ndarray:
    """Nonzero basis functions ``N_{span-p..span}`` and derivatives at ``x``.

    Row ``k`` of the result holds the ``k``-th derivatives.
    """
    U, p = kv.knots, kv.degree
    ndu = np.zeros((p + 1, p + 1))
    left = np.zeros(p + 1)
    right = np.zeros(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = x - U[span + 1 - j]
        right[j] = U[span + j] - x
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    ders = np.zeros((nders + 1, p + 1))
    ders[0] = ndu[:, p]
    a = np.zeros((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, nders + 1):
            d = 0.0
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, nders + 1):
        ders[k] *= fac
        fac *= p - k
    return ders


def bspline_basis(kv: KnotVector, i: int, x: float, deriv_order: int = 0) -> float:
    """Cox-de Boor value (or derivative up to order 2) of ``N_{i,p}`` at ``x``."""
    if not 0 <= i < kv.n:
        raise IndexError(f"basis index {i} out of range 0..{kv.n - 1}")
    if deriv_order not in (0, 1, 2):
        raise ValueError("deriv_order must be 0, 1 or 2")
    U = kv.knots
    last = kv.span(1.0)
    x = float(x)
    kv.span(x)

    def N(i, p, d):
        if d > p:
            return 0.0
        if p == 0:
            if U[i] <= x < U[i + 1] or (x == 1.0 and i == last):
                return 1.0
            return 0.0
        out = 0.0
        den1, den2 = U[i + p] - U[i], U[i + p + 1] - U[i + 1]
        if d == 0:
            if den1 > 0:
                out += (x - U[i]) / den1 * N(i, p - 1, 0)
            if den2 > 0:
                out += (U[i + p + 1] - x) / den2 * N(i + 1, p - 1, 0)
        else:
            if den1 > 0:
                out += p / den1 * N(i, p - 1, d - 1)
            if den2 > 0:
                out -= p / den2 * N(i + 1, p - 1, d - 1)
        return out

    return N(i, kv.degree, deriv_order)


def greville(kv: KnotVector) -> np.ndarray:
    p = kv.degree
    if p == 0:
        raise ValueError("Greville abscissae need degree >= 1")
    U = kv.knots
    return np.array([U[i + 1: i + p + 1].mean() for i in range(kv.n)])


@dataclass(frozen=True)
class NurbsSurface:
    u_knots: KnotVector
    v_knots: KnotVector
    weights: np.ndarray
    control_points: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        B = np.asarray(self.control_points, dtype=float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "control_points", B)
        n, m = self.u_knots.n, self.v_knots.n
        if w.shape != (n, m) or B.shape != (n, m, 2):
            raise ValueError(f"control net {B.shape} / weights {w.shape} do not match ({n}, {m})")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.u_knots.n, self.v_knots.n

    @property
    def degrees(self) -> tuple[int, int]:
        return self.u_knots.degree, self.v_knots.degree

    def homogeneous(self) -> np.ndarray:
        w = self.weights[..., None]
        return np.concatenate([self.control_points * w, w], axis=-1)

    @classmethod
    def from_homogeneous(cls, u_knots, v_knots, Pw) -> "NurbsSurface":
        w = Pw[..., 2]
        return cls(u_knots, v_knots, w, Pw[..., :2] / w[..., None])


@dataclass
class BasisAtPoint:
    """Nonzero rational basis functions at a parametric point.

    ``values[d]`` holds, for ``d`` in order, ``R, R_u, R_v, R_uu, R_uv, R_vv``
    for the basis indices ``index``.
    """

    index: np.ndarray
    values: np.ndarray


def basis_at(surface: NurbsSurface, u: float, v: float, nders: int = 2) -> BasisAtPoint:
    ku, kv_ = surface.u_knots, surface.v_knots
    p, q = surface.degrees
    n, _ = surface.shape
    su, sv = ku.span(u), kv_.span(v)
    Nu = np.zeros((3, p + 1))
    Nv = np.zeros((3, q + 1))
    Nu[: min(nders, p) + 1] = ders_basis_funs(ku, su, u, min(nders, p))
    Nv[: min(nders, q) + 1] = ders_basis_funs(kv_, sv, v, min(nders, q))
    iu = np.arange(su - p, su + 1)
    iv = np.arange(sv - q, sv + 1)
    w = surface.weights[np.ix_(iu, iv)]
    # tensor-product derivatives of N*w: orders (0,0),(1,0),(0,1),(2,0),(1,1),(0,2)
    orders = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    A = np.array([np.outer(Nu[a], Nv[b]) * w for a, b in orders])
    W = A.sum(axis=(1, 2))
    R = A[0] / W[0]
    Ru = (A[1] - R * W[1]) / W[0]
    Rv = (A[2] - R * W[2]) / W[0]
    Ruu = (A[3] - 2 * Ru * W[1] - R * W[3]) / W[0]
    Ruv = (A[4] - Ru * W[2] - Rv * W[1] - R * W[4]) / W[0]
    Rvv = (A[5] - 2 * Rv * W[2] - R * W[5]) / W[0]
    index = (iu[:, None] + n * iv[None, :]).ravel()
    values = np.array([R, Ru, Rv, Ruu, Ruv, Rvv]).reshape(6, -1)
    return BasisAtPoint(index, values)


@dataclass
class NurbsPoint:
    """Geometry map and its parametric derivatives at a point.

    ``jacobian[d, a] = dx_d / dxi_a`` and ``hessian[d, a, b]`` likewise.
    """

    x: np.ndarray
    jacobian: np.ndarray
    hessian: np.ndarray


def nurbs_eval(surface: NurbsSurface, u: float, v: float, deriv: int = 2) -> NurbsPoint:
    b = basis_at(surface, u, v, nders=deriv)
    B = surface.control_points.reshape(-1, 2, order="F")[b.index]
    R, Ru, Rv, Ruu, Ruv, Rvv = b.values
    x = R @ B
    J = np.column_stack([Ru @ B, Rv @ B])
    H = np.empty((2, 2, 2))
    H[:, 0, 0] = Ruu @ B
    H[:, 0, 1] = H[:, 1, 0] = Ruv @ B
    H[:, 1, 1] = Rvv @ B
    return NurbsPoint(x, J, H)


def _insert_knot(U: np.ndarray, p: int, P: np.ndarray, x: float):
    """Insert ``x`` once into a curve (control points along axis 0, homogeneous)."""
    n = P.shape[0]
    k = KnotVector(U, p).span(x)
    Q = np.empty((n + 1,) + P.shape[1:])
    Q[: k - p + 1] = P[: k - p + 1]
    Q[k + 1:] = P[k:]
    for i in range(k - p + 1, k + 1):
        a = (x - U[i]) / (U[i + p] - U[i])
        Q[i] = a * P[i] + (1.0 - a) * P[i - 1]
    return np.insert(U, k + 1, x), Q


def insert_knots(surface: NurbsSurface, u_new=(), v_new=()) -> NurbsSurface:
    Pw = surface.homogeneous()
    U, p = surface.u_knots.knots, surface.u_knots.degree
    for x in u_new:
        U, Pw = _insert_knot(U, p, Pw, float(x))
    V, q = surface.v_knots.knots, surface.v_knots.degree
    Pw = np.swapaxes(Pw, 0, 1)
    for x in v_new:
        V, Pw = _insert_knot(V, q, Pw, float(x))
    Pw = np.swapaxes(Pw, 0, 1)
    return NurbsSurface.from_homogeneous(KnotVector(U, p), KnotVector(V, q), Pw)


def _midpoints(kv: KnotVector) -> np.ndarray:
    u = np.unique(kv.knots)
    return 0.5 * (u[:-1] + u[1:])


def h_refine(surface: NurbsSurface, times: int = 1) -> NurbsSurface:
    """Insert the midpoint of every knot span in both directions."""
    for _ in range(times):
        surface = insert_knots(surface, _midpoints(surface.u_knots), _midpoints(surface.v_knots))
    return surface


def elevate_linear(surface: NurbsSurface, direction: int) -> NurbsSurface:
    """Raise a degree-1 direction to degree 2 (geometry unchanged)."""
    kvs = [surface.u_knots, surface.v_knots]
    kv = kvs[direction]
    if kv.degree != 1:
        raise ValueError("only degree-1 directions can be elevated")
    Pw = np.moveaxis(surface.homogeneous(), direction, 0)
    rows = [Pw[0]]
    for a in range(Pw.shape[0] - 1):
        rows += [0.5 * (Pw[a] + Pw[a + 1]), Pw[a + 1]]
    Pw = np.moveaxis(np.array(rows), 0, direction)
    inner = np.repeat(kv.knots[2:-2], 2)
    kvs[direction] = KnotVector(np.concatenate([[0.0] * 3, inner, [1.0] * 3]), 2)
    return NurbsSurface.from_homogeneous(kvs[0], kvs[1], Pw)


@dataclass
class CollocationSpace:
    surface: NurbsSurface
    greville_u: np.ndarray
    greville_v: np.ndarray
    params: np.ndarray
    points: np.ndarray
    interior: np.ndarray
    boundary: np.ndarray
    normals: np.ndarray
    ops: DiscretizationOperators
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def normal_derivative_operator(self) -> SparseMatrix:
        """Rows mapping coefficients to ``du/dn`` at the boundary points."""
        if "dn" not in self._cache:
            nx, ny = self.normals[:, 0], self.normals[:, 1]
            Mx = SparseMatrix(self.ops.M_x.csr[self.boundary])
            My = SparseMatrix(self.ops.M_y.csr[self.boundary])
            self._cache["dn"] = diag_left_mul(nx, Mx) + diag_left_mul(ny, My)
        return self._cache["dn"]


def _physical_derivatives(b: BasisAtPoint, geo: NurbsPoint, second: bool):
    J = geo.jacobian
    det = np.linalg.det(J)
    scale = max(1.0, np.abs(J).max())
    if abs(det) <= 1e-14 * scale * scale:
        raise GeometryError("singular geometry Jacobian at a collocation point")
    Jinv = np.linalg.inv(J)
    grad_p = b.values[1:3]
    grad_x = Jinv.T @ grad_p
    if not second:
        return grad_x, None
    Hp = np.array([[b.values[3], b.values[4]], [b.values[4], b.values[5]]])
    corr = np.einsum("dk,dab->abk", grad_x, geo.hessian)
    Hx = np.einsum("ca,abk,bd->cdk", Jinv.T, Hp - corr, Jinv)
    return grad_x, Hx


def _edge_normal(geo: NurbsPoint, edge: str) -> np.ndarray:
    J = geo.jacobian
    if edge in ("u0", "u1"):
        t, inward = J[:, 1], J[:, 0] * (1 if edge == "u0" else -1)
    else:
        t, inward = J[:, 0], J[:, 1] * (1 if edge == "v0" else -1)
    nrm = np.array([t[1], -t[0]])
    length = np.linalg.norm(nrm)
    if length == 0:
        raise GeometryError("zero-length boundary tangent")
    nrm /= length
    return -nrm if nrm @ inward > 0 else nrm


def build_collocation(surface: NurbsSurface, second_derivatives: bool | None = None) -> CollocationSpace:
    """Value and physical-derivative operators at tensor Greville points."""
    p, q = surface.degrees
    if second_derivatives is None:
        second_derivatives = min(p, q) >= 2
    elif second_derivatives and min(p, q) < 2:
        raise ValueError("second-derivative operators need degree >= 2 in both directions")
    gu, gv = greville(surface.u_knots), greville(surface.v_knots)
    n, m = surface.shape
    N = n * m
    names = ["M", "M_x", "M_y"] + (["M_xx", "M_xy", "M_yy"] if second_derivatives else [])
    rows, cols = [], []
    vals = {k: [] for k in names}
    params = np.zeros((N, 2))
    points = np.zeros((N, 2))
    normals = []
    boundary = []
    for j in range(m):
        for i in range(n):
            l = i + n * j
            u, v = gu[i], gv[j]
            params[l] = u, v
            b = basis_at(surface, u, v, nders=2 if second_derivatives else 1)
            geo = nurbs_eval(surface, u, v, deriv=2 if second_derivatives else 1)
            points[l] = geo.x
            gx, Hx = _physical_derivatives(b, geo, second_derivatives)
            rows.append(np.full(b.index.size, l))
            cols.append(b.index)
            vals["M"].append(b.values[0])
            vals["M_x"].append(gx[0])
            vals["M_y"].append(gx[1])
            if second_derivatives:
                vals["M_xx"].append(Hx[0, 0])
                vals["M_xy"].append(Hx[0, 1])
                vals["M_yy"].append(Hx[1, 1])
            edges = [e for e, hit in (("u0", u == 0.0), ("u1", u == 1.0),
                                      ("v0", v == 0.0), ("v1", v == 1.0)) if hit]
            if edges:
                boundary.append(l)
                nv = sum(_edge_normal(geo, e) for e in edges)
                normals.append(nv / np.linalg.norm(nv))
    r, c = np.concatenate(rows), np.concatenate(cols)
    mats = {k: SparseMatrix.from_coo(r, c, np.concatenate(v), (N, N)) for k, v in vals.items()}
    boundary = np.array(boundary, dtype=np.intp)
    interior = np.setdiff1d(np.arange(N), boundary)
    return CollocationSpace(surface, gu, gv, params, points, interior, boundary,
                            np.array(normals), DiscretizationOperators(**mats))


def boundary_normal_derivative(space: CollocationSpace, c) -> np.ndarray:
    return space.normal_derivative_operator() @ np.asarray(c, dtype=float)


def interpolate(space: CollocationSpace, fn) -> np.ndarray:
    """Coefficients whose collocation values match ``fn(x, y)`` at every point."""
    vals = fn(space.points[:, 0], space.points[:, 1])
    return solve(factorize(space.ops.M), vals)


# -- meshes -----------------------------------------------------------------

def _table_surface(p, q, U, V, n, m, rows) -> NurbsSurface:
    rows = np.asarray(rows, dtype=float)
    w = rows[:, 0].reshape((n, m), order="F")
    B = rows[:, 1:].reshape((n, m, 2), order="F")
    return NurbsSurface(KnotVector(U, p), KnotVector(V, q), w, B)


def builtin_mesh(name: str) -> NurbsSurface:
    if name == "square":
        rows = [(1, -1, 1), (1, -1, 0), (1, -1, -1),
                (1, 0, 1), (1, 0, 0), (1, 0, -1),
                (1, 1, 1), (1, 1, 0), (1, 1, -1)]
        return _table_surface(2, 2, [0, 0, 0, 1, 1, 1], [0, 0, 0, 1, 1, 1], 3, 3, rows)
    if name == "pipe":
        r = np.sqrt(2.0) / 2.0
        rows = [(1, 1, 0), (1, 2, 0), (r, 1, 1), (r, 2, 2), (1, 0, 1), (1, 0, 2)]
        return _table_surface(1, 2, [0, 0, 1, 1], [0, 0, 0, 1, 1, 1], 2, 3, rows)
    raise ValueError(f"unknown mesh {name!r}; choose 'square' or 'pipe'")


def write_mesh(surface: NurbsSurface, path) -> None:
    p, q = surface.degrees
    n, m = surface.shape
    lines = [f"degrees {p} {q}",
             " ".join(repr(float(x)) for x in surface.u_knots.knots),
             " ".join(repr(float(x)) for x in surface.v_knots.knots),
             f"{n} {m}"]
    w = surface.weights.ravel(order="F")
    B = surface.control_points.reshape(-1, 2, order="F")
    lines += [f"{wi!r} {x!r} {y!r}" for wi, (x, y) in zip(w.tolist(), B.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> NurbsSurface:
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    head = lines[0][1:] if lines[0][0] == "degrees" else lines[0]
    p, q = int(head[0]), int(head[1])
    U = [float(x) for x in lines[1]]
    V = [float(x) for x in lines[2]]
    n, m = int(lines[3][0]), int(lines[3][1])
    rows = [[float(x) for x in ln] for ln in lines[4: 4 + n * m]]
    if len(rows) != n * m or any(len(r) != 3 for r in rows):
        raise ValueError(f"{path}: expected {n * m} lines of 'w x y'")
    return _table_surface(p, q, U, V, n, m, rows)
