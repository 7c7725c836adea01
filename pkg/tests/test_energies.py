import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_nearest, loglog_slope, taylor_remainders
from shapelm import shapes
from shapelm.errors import (BoundaryPresent, DomainError, EmptyCloud, ShapeMismatch,
                            UnorientedCloud, ZeroVector)
from shapelm.energies import (NormalIntegration, PointCloud, PointFit, Willmore,
                              assemble_curvature_residual, assemble_normal_residual,
                              assemble_point_residual, assemble_scalar_rof,
                              attach_weight_derivatives, denoise_normal_field,
                              hernandez_weight, ncc)
from shapelm.fem import build_operators
from shapelm.mesh import TriMesh, displace_along_normals, face_geometry, vertex_normals

EPS = np.logspace(-2, -4, 6)


def fd_mesh():
    return shapes.perturb_vertices(shapes.icosphere(2), 0.002, 3)


def smooth_velocity(mesh):
    x = mesh.vertices
    return np.sin(3 * x[:, 0]) * np.cos(2 * x[:, 1]) + 0.3 * x[:, 2]


def builders(mesh):
    ops = build_operators(mesh)
    cloud = PointCloud(*shapes.sphere_cloud(3000, radius=1.1, seed=2))
    target = shapes.noisy_normals(ops.face_normals, 0.3, 5)

    def wrap(assemble):
        return lambda m, o, n: attach_weight_derivatives(assemble(m, o, n), m, o, n)

    return {
        "point": wrap(lambda m, o, n: assemble_point_residual(m, o, cloud, normals=n)),
        "normal": wrap(lambda m, o, n: assemble_normal_residual(m, o, target, n)),
        "curvature": wrap(lambda m, o, n: assemble_curvature_residual(m, o, n)),
    }


def snapshot_energy(build, mesh):
    return build(mesh, build_operators(mesh), vertex_normals(mesh)).energy()


# ----------------------------------------------------------------- normal ----

def test_normal_residual_zero_on_own_normals():
    m = shapes.icosphere(2)
    ops = build_operators(m)
    s = assemble_normal_residual(m, ops, ops.face_normals)
    assert s.energy() == 0.0
    assert np.all(s.r_n == 0)


def test_normal_residual_concentric_sphere():
    m = shapes.icosphere(3)
    ops = build_operators(m)
    target = shapes.radial_face_normals(m.with_vertices(2.5 * m.vertices))
    radial = shapes.radial_face_normals(m)
    np.testing.assert_allclose(target, radial, atol=1e-15)
    assert assemble_normal_residual(m, ops, radial).energy() == pytest.approx(
        0.5 * ops.w_face @ np.sum((ops.face_normals - radial) ** 2, axis=1))


def test_normal_residual_tilted_target():
    m = shapes.grid(4, 4)
    ops = build_operators(m)
    th = 0.1
    target = np.tile([0.0, np.sin(th), np.cos(th)], (m.n_faces, 1))
    s = assemble_normal_residual(m, ops, target)
    expected = 4 * np.sin(th / 2) ** 2
    np.testing.assert_allclose(np.sum(s.r_n ** 2, axis=1), expected, rtol=1e-12)
    assert expected == pytest.approx(0.0099916694, abs=1e-10)


def test_normal_residual_shape_mismatch():
    m = shapes.icosphere(1)
    with pytest.raises(ShapeMismatch):
        assemble_normal_residual(m, build_operators(m), np.zeros((3, 3)))


def test_block_row_counts():
    m = shapes.icosphere(2)
    ops = build_operators(m)
    cloud = PointCloud(*shapes.sphere_cloud(500, seed=1))
    s = assemble_point_residual(m, ops, cloud, normal_weight=0.5)
    s = s.merged(assemble_curvature_residual(m, ops))
    rows = sum(mat.shape[0] for _, mat, _ in s.blocks())
    assert rows == 3 * m.n_vertices + 3 * m.n_faces + m.n_vertices
    assert all(mat.shape[1] == m.n_vertices for _, mat, _ in s.blocks())


def test_gradient_linearization_is_minus_grad():
    m = shapes.icosphere(2)
    ops = build_operators(m)
    s = assemble_normal_residual(m, ops, ops.face_normals, linearization="gradient")
    assert abs(s.dn_dv + ops.grad).max() < 1e-14


# ------------------------------------------------------------------ points ---

def test_empty_cloud():
    with pytest.raises(EmptyCloud):
        PointCloud(np.zeros((0, 3)))


def test_cloud_normals_must_be_unit():
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), np.ones((2, 3)))


def test_unoriented_cloud_rejected():
    m = shapes.icosphere(1)
    cloud = PointCloud(np.zeros((1, 3)))
    with pytest.raises(UnorientedCloud):
        assemble_point_residual(m, build_operators(m), cloud, normal_weight=1.0)
    with pytest.raises(UnorientedCloud):
        PointFit(cloud, normal_weight=1.0)


def test_points_on_vertices_zero_energy():
    m = shapes.icosphere(2)
    s = assemble_point_residual(m, build_operators(m), PointCloud(m.vertices))
    assert s.energy() == 0.0


def test_single_origin_point():
    m = shapes.icosphere(3)
    ops = build_operators(m)
    s = assemble_point_residual(m, ops, PointCloud(np.zeros((1, 3))))
    np.testing.assert_allclose(np.linalg.norm(s.r_x, axis=1), 1.0, atol=1e-12)
    area = face_geometry(m)[0].sum()
    assert s.energy() == pytest.approx(0.5 * area, rel=1e-12)


def test_plane_grid_nearest():
    g = np.arange(-50, 51) * 0.01
    X, Y = np.meshgrid(g, g)
    pts = np.c_[X.ravel(), Y.ravel(), np.zeros(X.size)]
    cloud = PointCloud(pts)
    idx, dist = cloud.nearest(np.array([[0.0, 0.0, 0.3]]))
    assert np.linalg.norm(pts[idx[0]]) <= 0.01
    assert 0.3 <= dist[0] <= 0.30017


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 10000), st.integers(0, 2 ** 32 - 1))
def test_kdtree_matches_brute_force(n, seed):
    g = shapes.rng(seed)
    pts = g.normal(size=(n, 3))
    q = g.normal(size=(40, 3)) * 1.5
    idx, dist = PointCloud(pts).nearest(q)
    bidx, bdist = brute_nearest(pts, q)
    np.testing.assert_allclose(dist, bdist, rtol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(pts[idx] - q, axis=1), bdist, rtol=1e-12)


def test_screened_face_block_scaled():
    m = shapes.icosphere(2)
    ops = build_operators(m)
    pts, nrm = shapes.sphere_cloud(2000, seed=4)
    cloud = PointCloud(pts, nrm)
    s0 = assemble_point_residual(m, ops, cloud)
    s1 = assemble_point_residual(m, ops, cloud, normal_weight=0.25)
    face = dict((k, r) for k, r in s1.weighted_residuals())["normal"]
    np.testing.assert_allclose(
        0.5 * face @ face, 0.25 * 0.5 * ops.w_face @ np.sum(s1.r_n ** 2, axis=1), rtol=1e-12)
    assert s1.energy() > s0.energy()


# --------------------------------------------------------------- curvature ---

@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_willmore_sphere(r):
    m = shapes.icosphere(3, radius=r)
    e = assemble_curvature_residual(m, build_operators(m)).energy()
    assert abs(e - 8 * np.pi) <= 0.08 * 8 * np.pi


def test_curvature_needs_closed_mesh():
    m = shapes.grid(3, 3)
    with pytest.raises(BoundaryPresent):
        assemble_curvature_residual(m, build_operators(m))


def test_curvature_flat_region():
    m = shapes.cube(6)
    s = assemble_curvature_residual(m, build_operators(m))
    flat = np.sum(np.isclose(np.abs(m.vertices), 0.5), axis=1) == 1
    assert np.abs(s.r_c[flat]).max() < 1e-10


def test_curvature_continuum_linearization():
    from shapelm.fem import stiffness
    m = shapes.icosphere(2)
    ops = build_operators(m)
    s = assemble_curvature_residual(m, ops, linearization="continuum")
    ref = stiffness(ops).toarray() / ops.w_vertex[:, None]
    np.testing.assert_allclose(s.J_c.toarray(), ref, atol=1e-12)


# -------------------------------------------------------------- derivatives ---

@pytest.mark.parametrize("block", ["point", "normal", "curvature"])
def test_energy_directional_derivative(block):
    m = fd_mesh()
    build = builders(m)[block]
    v = smooth_velocity(m)
    normals = vertex_normals(m)
    s = build(m, build_operators(m), normals)
    r0 = np.concatenate([r for _, r in s.weighted_residuals()])
    jv = np.concatenate([mat @ v for _, mat, _ in s.blocks(weight_terms=True)])
    errs = []
    for e in EPS:
        up = snapshot_energy(build, displace_along_normals(m, e * v, normals))
        down = snapshot_energy(build, displace_along_normals(m, -e * v, normals))
        errs.append(abs((up - down) / (2 * e) - r0 @ jv))
    assert abs(loglog_slope(EPS, errs) - 2) <= 0.2


@pytest.mark.parametrize("block", ["point", "normal", "curvature"])
def test_residual_taylor_remainder(block):
    m = fd_mesh()
    rem = taylor_remainders(m, builders(m)[block], smooth_velocity(m), EPS)
    assert abs(loglog_slope(EPS, rem) - 2) <= 0.2


def test_frozen_weight_blocks_are_first_order_for_points():
    # Without the quadrature weight terms the point block misses the area change.
    m = fd_mesh()
    cloud = PointCloud(*shapes.sphere_cloud(3000, radius=1.1, seed=2))
    v = smooth_velocity(m)
    normals = vertex_normals(m)
    ops = build_operators(m)
    s = assemble_point_residual(m, ops, cloud, normals=normals)
    r0 = np.concatenate([r for _, r in s.weighted_residuals()])
    jv = np.concatenate([mat @ v for _, mat, _ in s.blocks()])
    rem = []
    for e in EPS:
        moved = displace_along_normals(m, e * v, normals)
        r1 = assemble_point_residual(moved, build_operators(moved), cloud).weighted_residuals()
        rem.append(np.linalg.norm(np.concatenate([r for _, r in r1]) - r0 - e * jv))
    assert loglog_slope(EPS, rem) < 1.5


def test_energy_consistency():
    m = shapes.perturb_vertices(shapes.icosphere(2), 0.02, 8)
    ops = build_operators(m)
    pts, nrm = shapes.sphere_cloud(1500, radius=1.2, seed=8)
    cloud = PointCloud(pts, nrm)
    s = assemble_point_residual(m, ops, cloud, normal_weight=0.7)
    idx, _ = cloud.nearest(m.vertices)
    quad_x = 0.5 * ops.w_vertex @ np.sum((m.vertices - pts[idx]) ** 2, axis=1)
    fidx, _ = cloud.nearest(m.vertices[m.faces].mean(axis=1))
    quad_n = 0.5 * 0.7 * ops.w_face @ np.sum((ops.face_normals - nrm[fidx]) ** 2, axis=1)
    assert s.energy() == pytest.approx(quad_x + quad_n, rel=1e-14)


def test_descriptor_assembly_matches_functions():
    m = shapes.icosphere(2)
    ops = build_operators(m)
    target = shapes.noisy_normals(ops.face_normals, 0.1, 1)
    assert NormalIntegration(target).assemble(m, ops).energy() == \
        assemble_normal_residual(m, ops, target).energy()
    assert NormalIntegration(lambda mesh: target).assemble(m, ops).energy() == \
        assemble_normal_residual(m, ops, target).energy()
    assert Willmore().assemble(m, ops).energy() == assemble_curvature_residual(m, ops).energy()
    with pytest.raises(NotImplementedError):
        Willmore().gd_terms(m, ops, vertex_normals(m))


def test_residual_field_nonnegative():
    m = shapes.icosphere(2)
    ops = build_operators(m)
    s = assemble_normal_residual(m, ops, shapes.noisy_normals(ops.face_normals, 0.2, 3))
    field = s.vertex_residual_field(m.faces)
    assert field.shape == (m.n_vertices,) and np.all(field >= 0) and field.max() > 0


# -------------------------------------------------------------------- ROF ----

def test_scalar_rof_block():
    m = shapes.icosphere(1)
    ops = build_operators(m)
    f = np.arange(m.n_vertices, dtype=float)
    s = assemble_scalar_rof(m, ops, f)
    ((name, mat, rhs),) = s.blocks()
    np.testing.assert_allclose(mat.diagonal(), np.sqrt(ops.w_vertex))
    np.testing.assert_allclose(rhs, np.sqrt(ops.w_vertex) * f)
    with pytest.raises(ShapeMismatch):
        assemble_scalar_rof(m, ops, np.zeros(3))


# --------------------------------------------------------------- denoising ---

def mean_angle(a, b):
    return np.degrees(np.arccos(np.clip(np.einsum("ij,ij->i", a, b), -1, 1))).mean()


@pytest.mark.parametrize("mode", ["ml", "rof"])
def test_denoise_constant_field(mode):
    m = shapes.grid(6, 6)
    ops = build_operators(m)
    const = np.tile([0.0, 0.6, 0.8], (m.n_faces, 1))
    np.testing.assert_allclose(denoise_normal_field(m, ops, const, mode, 0.5), const, atol=1e-6)


def test_denoise_lambda_zero():
    m, noisy = shapes.noisy_cube(4, 0.2, 1)
    out = denoise_normal_field(m, build_operators(m), noisy, "rof", 0.0)
    np.testing.assert_array_equal(out, noisy)


@pytest.mark.parametrize("mode", ["ml", "rof"])
def test_denoise_reduces_error(mode):
    m, noisy = shapes.noisy_cube(10, 0.2, 1)
    clean = shapes.cube_face_normals(m)
    out = denoise_normal_field(m, build_operators(m), noisy, mode, 0.01)
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)
    assert mean_angle(out, clean) < mean_angle(noisy, clean)


def test_denoise_rejects_bad_mode():
    m = shapes.icosphere(1)
    ops = build_operators(m)
    with pytest.raises(ValueError):
        denoise_normal_field(m, ops, ops.face_normals, "median", 1.0)


def test_denoise_zero_vector():
    V = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]
    m = TriMesh(V, [[0, 1, 2], [2, 1, 3]])
    field = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
    with pytest.raises(ZeroVector):
        denoise_normal_field(m, build_operators(m), field, "ml", 1e12)


# ------------------------------------------------------------- photometric ---

@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_hernandez_limits(sigma):
    assert hernandez_weight(1.0, sigma) == 0.0
    assert hernandez_weight(-1 + 1e-9, sigma) > 1 - 1e-6


def test_hernandez_value():
    assert hernandez_weight(0.0, 1.0) == pytest.approx(1 - np.exp(-1), rel=1e-12)
    assert hernandez_weight(0.0, 1.0) == pytest.approx(0.6321, abs=1e-4)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
def test_hernandez_strictly_decreasing(sigma):
    s = np.linspace(-1, 1, 1000)
    h = hernandez_weight(s, sigma)
    assert np.all((h >= 0) & (h <= 1))
    assert np.all(np.diff(h) < 0)


def test_hernandez_domain():
    with pytest.raises(DomainError):
        hernandez_weight(1.5, 1.0)
    with pytest.raises(ValueError):
        hernandez_weight(0.0, 0.0)


def test_ncc():
    a = np.array([0.3, -1.0, 2.0])
    assert ncc(a, a) == pytest.approx(1.0)
    assert ncc(a, -a) == pytest.approx(-1.0)
    assert ncc([1, 0], [0, 1]) == 0.0
    with pytest.raises(ZeroVector):
        ncc([0, 0], [1, 0])
    with pytest.raises(ValueError):
        ncc([1, 0], [1, 0, 0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 10))
def test_ncc_scale_invariant(seed, c):
    g = shapes.rng(seed)
    a, b = g.normal(size=8), g.normal(size=8)
    assert ncc(c * a, b) == pytest.approx(ncc(a, b), abs=1e-12)
    assert -1 <= ncc(a, b) <= 1
