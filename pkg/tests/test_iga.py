import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pclbench.iga import (GeometryError, KnotVector, NurbsSurface, boundary_normal_derivative, bspline_basis,
                          build_collocation, builtin_mesh, elevate_linear, greville, h_refine, insert_knots,
                          interpolate, nurbs_eval, read_mesh, write_mesh)

SAMPLES = [(u, v) for u in np.linspace(0, 1, 5) for v in np.linspace(0, 1, 5)]


def bernstein_oracle(x):
    return np.array([(1 - x) ** 2, 2 * x * (1 - x), x ** 2])


def test_bernstein_quadratics():
    kv = KnotVector([0, 0, 0, 1, 1, 1], 2)
    vals = [bspline_basis(kv, i, 0.3) for i in range(3)]
    assert np.allclose(vals, [0.49, 0.42, 0.09], atol=1e-15)
    assert np.allclose([bspline_basis(kv, i, 0.3, 1) for i in range(3)], [-1.4, 0.8, 0.6])
    assert np.allclose([bspline_basis(kv, i, 0.3, 2) for i in range(3)], [2.0, -4.0, 2.0])
    with pytest.raises(IndexError):
        bspline_basis(kv, 3, 0.3)


def test_knot_vector_validation():
    with pytest.raises(ValueError):
        KnotVector([0, 0.5, 1, 1], 1)
    with pytest.raises(ValueError):
        KnotVector([0, 0, 1, 0.5, 1, 1], 1)


@settings(max_examples=20, deadline=None)
@given(inner=st.lists(st.floats(0.01, 0.99), max_size=5), p=st.integers(1, 3), seed=st.integers(0, 1000))
def test_partition_of_unity(inner, p, seed):
    kv = KnotVector(np.concatenate([[0.0] * (p + 1), np.sort(inner), [1.0] * (p + 1)]), p)
    for x in np.random.default_rng(seed).uniform(0, 1, 50):
        assert abs(sum(bspline_basis(kv, i, x) for i in range(kv.n)) - 1) < 1e-12
        assert abs(sum(bspline_basis(kv, i, x, 1) for i in range(kv.n))) < 1e-9
    assert abs(sum(bspline_basis(kv, i, 1.0) for i in range(kv.n)) - 1) < 1e-12


def test_greville():
    assert np.allclose(greville(KnotVector([0, 0, 0, 1, 1, 1], 2)), [0, 0.5, 1])
    assert np.allclose(greville(KnotVector([0, 0, 1, 1], 1)), [0, 1])
    with pytest.raises(ValueError):
        greville(KnotVector([0, 1], 0))
    g = greville(h_refine(builtin_mesh("square")).u_knots)
    assert np.all(np.diff(g) > 0)


def test_square_map_is_affine():
    sq = builtin_mesh("square")
    J0 = nurbs_eval(sq, 0.2, 0.7).jacobian
    for u, v in SAMPLES:
        pt = nurbs_eval(sq, u, v)
        assert np.allclose(pt.jacobian, J0, atol=1e-14) and np.allclose(pt.hessian, 0, atol=1e-13)
    # the table lists points with i fastest along decreasing y, so the map is a rotation by 2
    assert np.allclose(J0, [[0.0, 2.0], [-2.0, 0.0]])
    corners = {tuple(np.round(nurbs_eval(sq, u, v).x, 12)) for u in (0, 1) for v in (0, 1)}
    assert corners == {(-1.0, 1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)}


def test_pipe_inner_and_outer_arcs():
    pipe = builtin_mesh("pipe")
    for v in np.linspace(0, 1, 41):
        assert abs(np.linalg.norm(nurbs_eval(pipe, 0.0, v).x) - 1) < 1e-10
        assert abs(np.linalg.norm(nurbs_eval(pipe, 1.0, v).x) - 2) < 1e-10


def test_constant_surface_has_zero_derivatives():
    sq = builtin_mesh("square")
    flat = NurbsSurface(sq.u_knots, sq.v_knots, sq.weights, np.full_like(sq.control_points, 0.5))
    pt = nurbs_eval(flat, 0.3, 0.6)
    assert np.allclose(pt.x, 0.5) and np.allclose(pt.jacobian, 0, atol=1e-14)


@pytest.mark.parametrize("name", ["square", "pipe"])
def test_h_refine_preserves_geometry(name):
    s = builtin_mesh(name)
    r = h_refine(s)
    assert r.shape == (s.shape[0] + 1, s.shape[1] + 1)
    assert 0.5 in r.u_knots.knots and np.all(r.weights > 0)
    for surf in (r, h_refine(s, 3)):
        for u, v in SAMPLES:
            assert np.allclose(nurbs_eval(surf, u, v).x, nurbs_eval(s, u, v).x, atol=1e-12, rtol=0)
    twice = h_refine(s, 2)
    again = h_refine(h_refine(s))
    assert np.array_equal(twice.u_knots.knots, again.u_knots.knots)
    assert np.allclose(twice.control_points, again.control_points, atol=1e-15)


def test_elevation_and_knot_insertion_preserve_geometry():
    pipe = builtin_mesh("pipe")
    e = elevate_linear(pipe, 0)
    assert e.degrees == (2, 2)
    k = insert_knots(pipe, [0.25], [0.3, 0.3])
    for u, v in SAMPLES:
        x = nurbs_eval(pipe, u, v, deriv=1).x
        assert np.allclose(nurbs_eval(e, u, v).x, x, atol=1e-12)
        assert np.allclose(nurbs_eval(k, u, v, deriv=1).x, x, atol=1e-12)
    with pytest.raises(ValueError):
        elevate_linear(pipe, 1)


POLYS = [
    (lambda x, y: 1 + 0 * x, lambda x, y: (0 * x, 0 * x, 0 * x, 0 * x, 0 * x)),
    (lambda x, y: x, lambda x, y: (1 + 0 * x, 0 * x, 0 * x, 0 * x, 0 * x)),
    (lambda x, y: x * x, lambda x, y: (2 * x, 0 * x, 2 + 0 * x, 0 * x, 0 * x)),
    (lambda x, y: x * y, lambda x, y: (y, x, 0 * x, 1 + 0 * x, 0 * x)),
    (lambda x, y: x * x * y * y, lambda x, y: (2 * x * y * y, 2 * x * x * y, 2 * y * y, 4 * x * y, 2 * x * x)),
    (lambda x, y: 3 * y * y - x * y * y + 2, lambda x, y: (-y * y, 6 * y - 2 * x * y, 0 * x, -2 * y, 6 - 2 * x)),
]


@pytest.mark.parametrize("refine", [0, 1, 2])
@pytest.mark.parametrize("k", range(len(POLYS)))
def test_polynomial_reproduction_square(refine, k):
    space = build_collocation(h_refine(builtin_mesh("square"), refine))
    fn, ders = POLYS[k]
    c = interpolate(space, fn)
    x, y = space.points.T
    ops = space.ops
    expect = ders(x, y)
    assert np.allclose(ops.M @ c, fn(x, y), atol=1e-9)
    for M, e in zip((ops.M_x, ops.M_y, ops.M_xx, ops.M_xy, ops.M_yy), expect):
        assert np.max(np.abs(M @ c - e)) < 1e-9


def test_collocation_structure():
    for surf in (h_refine(builtin_mesh("square"), 2), h_refine(elevate_linear(builtin_mesh("pipe"), 0), 2)):
        space = build_collocation(surf)
        n, m = surf.shape
        assert space.interior.size + space.boundary.size == n * m == space.size
        assert space.boundary.size == 2 * (n + m) - 4
        p, q = surf.degrees
        assert space.ops.M.row_nnz().max() <= (p + 1) * (q + 1)
        assert np.allclose(space.ops.M @ np.full(n * m, 3.0), 3.0)
        assert np.allclose(space.ops.M_x @ np.ones(n * m), 0.0, atol=1e-12)
        assert np.all(space.ops.M.values >= -1e-15)


def test_first_derivatives_only_for_linear_directions():
    with pytest.raises(ValueError):
        build_collocation(builtin_mesh("pipe"), second_derivatives=True)
    space = build_collocation(builtin_mesh("pipe"))
    assert space.ops.M_xx is None


def test_square_normal_derivatives():
    space = build_collocation(h_refine(builtin_mesh("square"), 2))
    c = interpolate(space, lambda x, y: x)
    dn = boundary_normal_derivative(space, c)
    pts = space.points[space.boundary]
    on_x = np.isclose(np.abs(pts[:, 0]), 1) & ~np.isclose(np.abs(pts[:, 1]), 1)
    on_y = np.isclose(np.abs(pts[:, 1]), 1) & ~np.isclose(np.abs(pts[:, 0]), 1)
    assert np.allclose(dn[on_x], np.sign(pts[on_x, 0]), atol=1e-12)
    assert np.allclose(dn[on_y], 0.0, atol=1e-12)
    assert np.allclose(boundary_normal_derivative(space, np.ones(space.size)), 0, atol=1e-12)


def test_pipe_radial_normal_derivative():
    # the radial distance lies in the elevated NURBS space, so the check is tight at every level
    for refine in (2, 3, 4):
        space = build_collocation(h_refine(elevate_linear(builtin_mesh("pipe"), 0), refine))
        c = interpolate(space, lambda x, y: np.hypot(x, y))
        dn = boundary_normal_derivative(space, c)
        u, v = space.params[space.boundary].T
        arc = ((u == 0) | (u == 1)) & (v > 0) & (v < 1)  # corners carry averaged normals
        expect = np.where(u[arc] == 0, -1.0, 1.0)
        assert np.max(np.abs(dn[arc] - expect)) < 1e-6


def test_manufactured_helmholtz_residual_shrinks():
    def u(x, y):
        return np.sin(x) * np.cos(0.5 * y)

    def f(x, y):  # lap(u) + k^2 g u with k = 0.5 and g = 1 + x^2
        return -1.25 * u(x, y) + 0.25 * (1 + x * x) * u(x, y)

    res = []
    for refine in (2, 3, 4):
        space = build_collocation(h_refine(builtin_mesh("square"), refine))
        c = interpolate(space, u)
        x, y = space.points.T
        A = space.ops.M_xx + space.ops.M_yy
        r = (A @ c + 0.25 * (1 + x * x) * (space.ops.M @ c) - f(x, y))[space.interior]
        res.append(np.max(np.abs(r)))
    assert res[0] > 2 * res[1] > 4 * res[2]


def test_singular_geometry_detected():
    sq = builtin_mesh("square")
    squashed = sq.control_points.copy()
    squashed[..., 1] = 0.0
    with pytest.raises(GeometryError):
        build_collocation(NurbsSurface(sq.u_knots, sq.v_knots, sq.weights, squashed))


@pytest.mark.parametrize("name", ["square", "pipe"])
def test_mesh_file_round_trip(tmp_path, name):
    s = builtin_mesh(name)
    write_mesh(s, tmp_path / "m.txt")
    r = read_mesh(tmp_path / "m.txt")
    assert np.array_equal(r.weights, s.weights) and np.array_equal(r.control_points, s.control_points)
    assert np.array_equal(r.u_knots.knots, s.u_knots.knots)
    assert r.weights[0, 1] == np.sqrt(2.0) / 2.0 if name == "pipe" else True
