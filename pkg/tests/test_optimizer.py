import csv

import numpy as np
import pytest

from shapelm import shapes
from shapelm.admm import SolverConfig
from shapelm.errors import DegenerateFace
from shapelm.energies import NormalIntegration, PointCloud, PointFit
from shapelm.fem import build_operators
from shapelm.mesh import enclosed_volume, face_geometry, vertex_normals
from shapelm.optimizer import (GdConfig, LmConfig, evaluate_energy, gd_run, gd_step, lm_run,
                               lm_step, velocity_norm)

TIGHT = SolverConfig(cg_iters=200, cg_tol=1e-10)


def own_normals(mesh):
    return NormalIntegration(lambda m: build_operators(m).face_normals)


class WrongSign:
    """Normal energy whose linearisation points uphill, so every step is rejected."""

    def __init__(self, target):
        self.inner = NormalIntegration(target)

    def assemble(self, mesh, ops, normals=None):
        s = self.inner.assemble(mesh, ops, normals)
        s.dn_dv = -s.dn_dv
        return s


def radius_fit(n_points=80000):
    return PointFit(PointCloud(*shapes.sphere_cloud(n_points, radius=1.2, seed=3)))


@pytest.mark.parametrize("kwargs", [dict(p=3), dict(lambda0=0), dict(lambda_up=1),
                                    dict(lambda_down=0.5), dict(max_outer_iters=-1),
                                    dict(step_tol=0), dict(correspondence_refresh="never")])
def test_lm_config_validation(kwargs):
    with pytest.raises(ValueError):
        LmConfig(**kwargs)


@pytest.mark.parametrize("kwargs", [dict(lam=-0.1), dict(max_iters=-1), dict(tol=0)])
def test_gd_config_validation(kwargs):
    with pytest.raises(ValueError):
        GdConfig(**kwargs)


def test_evaluate_energy_examples():
    m = shapes.icosphere(3)
    ops = build_operators(m)
    assert evaluate_energy(m, ops, NormalIntegration(ops.face_normals)) == 0.0
    assert evaluate_energy(m, ops, NormalIntegration(shapes.radial_face_normals(m))) < 1e-3
    origin = PointFit(PointCloud(np.zeros((1, 3))))
    assert evaluate_energy(m, ops, origin) == pytest.approx(0.5 * ops.w_vertex.sum(), rel=1e-12)
    assert 0.5 * ops.w_vertex.sum() < 2 * np.pi


def test_lm_step_zero_residual_noop():
    m = shapes.icosphere(2)
    res = lm_step(m, LmConfig(), own_normals(m))
    assert res.accepted and res.candidate is m
    assert not np.any(res.v)
    assert res.new_lambda < LmConfig().lambda0


def test_lm_run_optimal_input_single_iteration():
    m = shapes.icosphere(2)
    run = lm_run(m, LmConfig(), own_normals(m))
    assert len(run.records) == 1 and run.stop_reason == "step_tol"
    assert run.mesh is m


def test_lm_run_zero_iterations():
    m = shapes.icosphere(1)
    run = lm_run(m, LmConfig(max_outer_iters=0), radius_fit(2000))
    assert run.mesh is m and run.records == []


def test_lm_step_toward_larger_sphere():
    m = shapes.icosphere(3)
    res = lm_step(m, LmConfig(lambda0=0.1, solver=TIGHT), radius_fit())
    assert res.accepted and res.energy_new < res.energy_old
    assert np.mean(res.v) > 0
    r0 = np.linalg.norm(m.vertices, axis=1).mean()
    r1 = np.linalg.norm(res.candidate.vertices, axis=1).mean()
    assert abs(r1 - 1.2) < abs(r0 - 1.2)


def test_lm_run_offset_sphere_fit():
    m = shapes.icosphere(3)
    run = lm_run(m, LmConfig(lambda0=0.1, max_outer_iters=20, solver=TIGHT), radius_fit())
    e = run.accepted_energies
    assert np.any(e[1:11] <= 0.01 * e[0])


def test_rejection_safety():
    m = shapes.perturb_vertices(shapes.icosphere(2), 0.01, 2)
    target = shapes.noisy_normals(build_operators(m).face_normals, 0.3, 1)
    cfg = LmConfig(lambda0=1e-3, solver=TIGHT)
    before = m.vertices.copy()
    res = lm_step(m, cfg, WrongSign(target))
    assert not res.accepted
    assert res.candidate is m
    np.testing.assert_array_equal(m.vertices, before)
    assert res.new_lambda > cfg.lambda0


def test_repeated_rejection_hits_lambda_max():
    m = shapes.perturb_vertices(shapes.icosphere(1), 0.01, 2)
    target = shapes.noisy_normals(build_operators(m).face_normals, 0.3, 1)
    run = lm_run(m, LmConfig(lambda0=1e-3, lambda_max=1.0, solver=TIGHT), WrongSign(target))
    assert run.stop_reason == "lambda_max" and run.n_accepted == 0
    assert run.mesh is m
    lams = [r.lam for r in run.records]
    assert np.all(np.diff(lams) > 0)


@pytest.mark.parametrize("p", [1, 2])
def test_pure_normal_motion_and_monotone_energy(p):
    m, target = shapes.noisy_cube(6, 0.2, 3)
    fit = NormalIntegration(target)
    mesh = m
    for _ in range(4):
        res = lm_step(mesh, LmConfig(p=p, lambda0=0.1), fit)
        if not res.accepted:
            continue
        d = res.candidate.vertices - mesh.vertices
        n = vertex_normals(mesh)
        moved = np.linalg.norm(d, axis=1) > 0
        cross = np.linalg.norm(np.cross(d[moved], n[moved]), axis=1) / np.linalg.norm(d[moved], axis=1)
        assert np.all(cross <= 1e-10)
        mesh = res.candidate
    run = lm_run(m, LmConfig(p=p, lambda0=0.1, max_outer_iters=8), fit)
    assert np.all(np.diff(run.accepted_energies) < 0)


def test_lm_trace_and_snapshots(tmp_path):
    m, target = shapes.noisy_cube(4, 0.2, 3)
    cfg = LmConfig(lambda0=0.1, max_outer_iters=4, snapshot_every=2, snapshot_dir=str(tmp_path))
    run = lm_run(m, cfg, NormalIntegration(target))
    run.write_trace(tmp_path / "t.csv", {"method": "lmd", "seed": 3})
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[:2] == ["# method=lmd", "# seed=3"]
    rows = list(csv.reader(lines[2:]))
    assert rows[0] == ["iter", "energy", "step_norm", "lambda", "accepted", "min_angle", "cg_iters"]
    assert len(rows) == 2 + len(run.records)
    assert sorted(p.name for p in tmp_path.glob("snapshot_*.ply")) == \
        ["snapshot_%04d.ply" % k for k in range(2, len(run.records) + 1, 2)]


def test_velocity_norm():
    ops = build_operators(shapes.cube(2))
    assert velocity_norm(np.ones(ops.n_vertices), ops) == pytest.approx(np.sqrt(6.0))


# --------------------------------------------------------------------- GD ----

def test_gd_identity():
    m = shapes.icosphere(2)
    new, iters = gd_step(m, build_operators(m), GdConfig(lam=0.0), own_normals(m))
    np.testing.assert_array_equal(new.vertices, m.vertices)


def test_gd_zero_iterations():
    m = shapes.icosphere(1)
    run = gd_run(m, GdConfig(max_iters=0), own_normals(m))
    assert run.mesh is m and run.records == []


def test_gd_mcm_shrinks():
    m = shapes.icosphere(3)
    run_mesh = m
    radii, volumes, areas = [], [], []
    fit = own_normals(m)
    for _ in range(10):
        run_mesh, _ = gd_step(run_mesh, build_operators(run_mesh), GdConfig(lam=0.01), fit)
        radii.append(np.linalg.norm(run_mesh.vertices, axis=1).mean())
        volumes.append(enclosed_volume(run_mesh))
        areas.append(face_geometry(run_mesh)[0].sum())
    assert radii[0] < 1.0
    assert np.all(np.diff(volumes) < 0) and np.all(np.diff(areas) < 0)


def test_gd_own_normals_is_pure_mcm():
    m = shapes.icosphere(2)
    ops = build_operators(m)
    phi, speed = own_normals(m).gd_terms(m, ops, vertex_normals(m))
    assert np.all(phi == 0) and np.abs(speed).max() < 1e-12


def test_gd_point_speed():
    m = shapes.icosphere(2)
    ops = build_operators(m)
    fit = PointFit(PointCloud(np.zeros((1, 3))))
    phi, speed = fit.gd_terms(m, ops, vertex_normals(m))
    np.testing.assert_allclose(phi, 0.5, rtol=1e-12)
    assert np.all(speed > 0.9)


def test_gd_run_trace_schema(tmp_path):
    m, target = shapes.noisy_cube(4, 0.2, 3)
    run = gd_run(m, GdConfig(lam=0.5, max_iters=3), NormalIntegration(target))
    assert len(run.records) == 3 and all(r.accepted for r in run.records)
    run.write_trace(tmp_path / "g.csv")
    header = (tmp_path / "g.csv").read_text().splitlines()[0]
    assert header == "iter,energy,step_norm,lambda,accepted,min_angle,cg_iters"


def test_gd_halt_on_failure():
    m, target = shapes.noisy_cube(6, 0.4, 2)
    fit = NormalIntegration(target)
    run = gd_run(m, GdConfig(lam=0.0, max_iters=50), fit, halt_on_failure=True)
    assert run.stop_reason == "degenerate" and run.degraded()
    assert 0 < len(run.records) < 50
    with pytest.raises(DegenerateFace):
        gd_run(m, GdConfig(lam=0.0, max_iters=50), fit)
