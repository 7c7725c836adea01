"""Outer loops: Levenberg-Marquardt in shape space and implicit gradient descent.

A Levenberg-Marquardt step assembles the residual system at the current mesh,
solves the regularised local model for a normal velocity ``v`` and moves every
vertex by ``v_i n_i``. The regularisation weight acts as an inverse trust
region radius: it shrinks after a successful step and grows after a rejected
one. The gradient-descent baseline is a backward Euler step of the shape
gradient flow with a mean-curvature regulariser.
"""

import csv
import os
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .admm import SolverConfig, solve_subproblem
from .errors import BreakdownError, DegenerateFace
from .fem import build_operators, stiffness
from .mesh import displace_along_normals, mesh_quality, vertex_normals

TRACE_COLUMNS = ["iter", "energy", "step_norm", "lambda", "accepted", "min_angle", "cg_iters"]


@dataclass(frozen=True)
class LmConfig:
    """Outer Levenberg-Marquardt parameters.

    ``p = 2`` gives the Dirichlet-regularised variant (LMD), ``p = 1`` the
    total-variation one (LMTV). ``solver`` holds the inner parameters; its
    ``lam`` and ``p`` fields are overridden at every step.
    """

    p: int = 2
    lambda0: float = 1.0
    lambda_up: float = 10.0
    lambda_down: float = 2.0
    max_outer_iters: int = 50
    energy_rel_tol: float = 1e-9
    step_tol: float = 1e-10
    lambda_max: float = 1e12
    solver: SolverConfig = field(default_factory=SolverConfig)
    correspondence_refresh: str = "per_step"
    snapshot_every: int = 0
    snapshot_dir: str = None

    def __post_init__(self):
        if self.p not in (1, 2):
            raise ValueError("p must be 1 or 2")
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be > 0")
        if not self.lambda_max >= self.lambda0:
            raise ValueError("lambda_max must be >= lambda0")
        if not (self.lambda_up > 1 and self.lambda_down > 1):
            raise ValueError("lambda adaptation factors must be > 1")
        if self.max_outer_iters < 0:
            raise ValueError("max_outer_iters must be >= 0")
        if not (self.energy_rel_tol > 0 and self.step_tol > 0):
            raise ValueError("tolerances must be > 0")
        if self.correspondence_refresh != "per_step":
            raise ValueError("only per_step correspondence refresh is supported")
        if self.snapshot_every < 0:
            raise ValueError("snapshot_every must be >= 0")


@dataclass(frozen=True)
class GdConfig:
    """Backward Euler gradient descent with mean-curvature weight ``lam``."""

    lam: float = 0.1
    max_iters: int = 50
    tol: float = 1e-8
    snapshot_every: int = 0
    snapshot_dir: str = None

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")


@dataclass
class IterRecord:
    iter: int
    energy: float
    step_norm: float
    lam: float
    accepted: bool
    min_angle: float
    cg_iters: int

    def row(self):
        return [self.iter, repr(float(self.energy)), repr(float(self.step_norm)),
                repr(float(self.lam)), int(self.accepted), repr(float(self.min_angle)),
                self.cg_iters]


@dataclass
class OptimRun:
    """Trace of one optimisation run and its final mesh.

    ``energy`` of a record is the energy of the iterate after that
    iteration (unchanged on a rejected step).
    """

    mesh: object
    initial_energy: float
    initial_min_angle: float
    records: list = field(default_factory=list)
    stop_reason: str = ""
    method: str = ""

    @property
    def energies(self):
        return np.array([self.initial_energy] + [r.energy for r in self.records])

    @property
    def accepted_energies(self):
        return np.array([self.initial_energy] + [r.energy for r in self.records if r.accepted])

    @property
    def n_accepted(self):
        return sum(1 for r in self.records if r.accepted)

    def final_quality(self):
        return mesh_quality(self.mesh)

    def degraded(self, angle_ratio=0.25):
        """Self-intersections, a collapsed minimum angle or a degenerate face."""
        if self.stop_reason in ("degenerate", "breakdown"):
            return True
        q = self.final_quality()
        return q.self_intersection_count > 0 or q.min_angle < angle_ratio * self.initial_min_angle

    def write_trace(self, path, comments=None):
        """CSV trace; ``comments`` (a dict) is written first as ``# key=value`` lines."""
        with open(path, "w", newline="") as fh:
            for k, v in (comments or {}).items():
                fh.write(f"# {k}={v}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            w.writerow([0, repr(float(self.initial_energy)), repr(0.0), "", 1,
                        repr(float(self.initial_min_angle)), 0])
            for r in self.records:
                w.writerow(r.row())


class StepResult(NamedTuple):
    candidate: object
    v: np.ndarray
    accepted: bool
    new_lambda: float
    energy_old: float
    energy_new: float
    cg_iters: int


def evaluate_energy(mesh, ops, assembler):
    """Quadrature value of the energy described by ``assembler`` on ``mesh``."""
    return assembler.assemble(mesh, ops).energy()


def velocity_norm(v, ops):
    """``|v|_{L^2}`` with the lumped vertex mass."""
    return float(np.sqrt(ops.w_vertex @ (v * v)))


def lm_step(mesh, cfg, assembler, lam=None):
    """One trust-region step; the mesh is returned unchanged on rejection.

    A candidate with a degenerate face counts as a rejection.
    """
    lam = cfg.lambda0 if lam is None else lam
    ops = build_operators(mesh)
    normals = vertex_normals(mesh)
    system = assembler.assemble(mesh, ops, normals)
    e_old = system.energy()
    scfg = replace(cfg.solver, lam=lam, p=cfg.p)
    v, cg_iters = solve_subproblem(system, ops, scfg)
    if not np.all(np.isfinite(v)):
        raise BreakdownError("non-finite velocity")
    if not np.any(v):
        return StepResult(mesh, v, True, lam / cfg.lambda_down, e_old, e_old, cg_iters)
    candidate = displace_along_normals(mesh, v, normals)
    try:
        e_new = evaluate_energy(candidate, build_operators(candidate), assembler)
    except DegenerateFace:
        e_new = np.inf
    if e_new < e_old:
        return StepResult(candidate, v, True, lam / cfg.lambda_down, e_old, e_new, cg_iters)
    return StepResult(mesh, v, False, lam * cfg.lambda_up, e_old, e_old, cg_iters)


def _snapshot(mesh, cfg, k):
    if cfg.snapshot_every and cfg.snapshot_dir and k % cfg.snapshot_every == 0:
        from .fileio import save_mesh
        save_mesh(mesh, os.path.join(cfg.snapshot_dir, "snapshot_%04d.ply" % k))


def lm_run(mesh, cfg, assembler, callback=None):
    """Iterate :func:`lm_step` until a stopping rule fires.

    Stops after ``max_outer_iters`` steps, when an accepted velocity has
    ``|v|_{L^2} <= step_tol``, or when the relative energy decrease over the
    last three accepted steps drops below ``energy_rel_tol``. Repeated
    rejections that push the weight beyond ``lambda_max`` also end the run:
    no step the local model can produce decreases the energy any more.
    """
    ops = build_operators(mesh)
    e0 = evaluate_energy(mesh, ops, assembler)
    run = OptimRun(mesh, e0, mesh_quality(mesh, intersections=False).min_angle,
                   method="lmd" if cfg.p == 2 else "lmtv")
    lam = cfg.lambda0
    accepted = [e0]
    run.stop_reason = "max_iters"
    for k in range(1, cfg.max_outer_iters + 1):
        res = lm_step(run.mesh, cfg, assembler, lam)
        step = velocity_norm(res.v, ops) if res.accepted else 0.0
        if res.accepted:
            run.mesh = res.candidate
            ops = build_operators(run.mesh)
            accepted.append(res.energy_new)
        rec = IterRecord(k, res.energy_new, step, lam, res.accepted,
                         mesh_quality(run.mesh, intersections=False).min_angle, res.cg_iters)
        run.records.append(rec)
        lam = res.new_lambda
        _snapshot(run.mesh, cfg, k)
        if callback is not None:
            callback(rec, run.mesh)
        if res.accepted and step <= cfg.step_tol:
            run.stop_reason = "step_tol"
            break
        if not res.accepted and lam > cfg.lambda_max:
            run.stop_reason = "lambda_max"
            break
        if res.accepted and len(accepted) > 3:
            ref = accepted[-4]
            if ref <= 0 or (ref - accepted[-1]) <= cfg.energy_rel_tol * ref:
                run.stop_reason = "energy_rel_tol"
                break
    return run


def gd_step(mesh, ops, cfg, assembler, normals=None):
    """Backward Euler step ``(M + D K) X' = M (X - g n)`` with ``D = lam + phi``.

    ``g`` is the normal speed and ``phi`` the pointwise cost supplied by
    ``assembler.gd_terms``. Returns the new mesh and the number of CG
    iterations (summed over coordinates).
    """
    if normals is None:
        normals = vertex_normals(mesh)
    phi, speed = assembler.gd_terms(mesh, ops, normals)
    diag = cfg.lam + np.maximum(phi, 0.0)
    X = mesh.vertices
    rhs = X - speed[:, None] * normals
    if not np.any(diag):
        return mesh.with_vertices(rhs), 0
    K = stiffness(ops)
    M = ops.w_vertex
    out = np.empty_like(X)
    iters = 0
    if np.all(diag > 0):
        # symmetric form (M/D + K) X' = (M/D) rhs
        A = (sp.diags(M / diag) + K).tocsr()
        jacobi = sp.diags(1.0 / A.diagonal())
        counter = []
        for c in range(3):
            b = M / diag * rhs[:, c]
            sol, info = spla.cg(A, b, x0=X[:, c], rtol=cfg.tol, atol=0.0, maxiter=10 * len(M),
                                M=jacobi, callback=counter.append)
            if info != 0 or not np.all(np.isfinite(sol)):
                raise BreakdownError(f"conjugate gradients failed (info={info})")
            out[:, c] = sol
        iters = len(counter)
    else:
        A = (sp.diags(M) + sp.diags(diag) @ K).tocsc()
        lu = spla.splu(A)
        for c in range(3):
            out[:, c] = lu.solve(M * rhs[:, c])
        if not np.all(np.isfinite(out)):
            raise BreakdownError("direct solve produced non-finite values")
    return mesh.with_vertices(out), iters


def gd_run(mesh, cfg, assembler, callback=None, halt_on_failure=False):
    """Iterate :func:`gd_step`; same trace schema as :func:`lm_run`.

    With ``halt_on_failure=True`` a degenerate face or a failed linear solve
    ends the run (``stop_reason`` ``"degenerate"`` or ``"breakdown"``)
    instead of raising, so that unstable runs can be inspected.
    """
    ops = build_operators(mesh)
    e0 = evaluate_energy(mesh, ops, assembler)
    run = OptimRun(mesh, e0, mesh_quality(mesh, intersections=False).min_angle, method="gd")
    run.stop_reason = "max_iters"
    for k in range(1, cfg.max_iters + 1):
        try:
            normals = vertex_normals(run.mesh)
            new, iters = gd_step(run.mesh, ops, cfg, assembler, normals)
            new_ops = build_operators(new)
            energy = evaluate_energy(new, new_ops, assembler)
        except (DegenerateFace, BreakdownError) as exc:
            if not halt_on_failure:
                raise
            run.stop_reason = "degenerate" if isinstance(exc, DegenerateFace) else "breakdown"
            break
        step = velocity_norm(np.linalg.norm(new.vertices - run.mesh.vertices, axis=1), ops)
        run.mesh, ops = new, new_ops
        rec = IterRecord(k, energy, step, cfg.lam, True,
                         mesh_quality(new, intersections=False).min_angle, iters)
        run.records.append(rec)
        _snapshot(new, cfg, k)
        if callback is not None:
            callback(rec, new)
    return run
