"""Command-line front end.

Subcommands ``integrate``, ``denoise-normals``, ``fit-points``, ``texture-rof``
and ``synth``. Every parameter can also come from a ``key=value`` file given
with ``--config``; command-line flags take precedence. Exit status is 0 on
success, 1 on invalid usage or input and 2 on numerical breakdown.
"""

import argparse
import os
import sys

import numpy as np

from . import shapes
from .admm import SolverConfig, solve_subproblem_tv
from .energies import (NormalIntegration, PointCloud, PointFit, assemble_scalar_rof,
                       denoise_normal_field)
from .errors import BreakdownError, ShapeLMError
from .fem import build_operators
from .fileio import (load_mesh_data, load_point_cloud, save_mesh, save_point_cloud,
                     save_vertex_field)
from .mesh import check_vertex_field, mesh_quality, vertex_normals
from .optimizer import GdConfig, LmConfig, gd_run, lm_run

SHAPES = ("icosphere", "cube", "noisy-cube", "torus", "cutbox-cloud", "sphere-cloud",
          "strip", "texture-grid")
TARGETS = ("sphere", "offset-sphere", "synthetic-cube")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ------------------------------------------------------------- arguments ----

def _common(p):
    g = p.add_argument_group("solver")
    g.add_argument("--method", choices=("gd", "lmd", "lmtv"))
    g.add_argument("--lambda", dest="lam", type=float,
                   help="LM initial regularisation weight, or GD curvature weight")
    g.add_argument("--mu", type=float)
    g.add_argument("--admm-iters", type=int)
    g.add_argument("--cg-iters", type=int)
    g.add_argument("--cg-tol", type=float)
    g.add_argument("--max-iters", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--trace", help="CSV trace output")
    g.add_argument("--out", help="output mesh (PLY or OBJ)")
    g.add_argument("--config", help="key=value parameter file")


DEFAULTS = dict(method="lmd", lam=0.1, mu=1.0, admm_iters=30, cg_iters=10, cg_tol=1e-6,
                max_iters=50, seed=0, trace=None, out=None, normal_weight=0.0, mode="rof",
                denoise_lambda=0.1, target=None, target_center="0.25,0,0", mesh=None,
                cloud=None, field=None, normals_out=None, field_out=None, subdiv=3,
                radius=1.0, n=None, sigma=None, size=1.0, vertex_sigma=0.0,
                snapshot_every=0, snapshot_dir=None)


def build_parser():
    parser = _Parser(prog="shapelm", description="Levenberg-Marquardt shape optimization")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("integrate", help="find a surface matching a normal field")
    _common(p)
    p.add_argument("--mesh", help="initial mesh")
    p.add_argument("--target", help="PLY with face normals, or one of " + ", ".join(TARGETS))
    p.add_argument("--target-center", help="centre of offset-sphere, 'x,y,z'")
    _snapshots(p)

    p = sub.add_parser("denoise-normals", help="smooth the face normals, then integrate")
    _common(p)
    p.add_argument("--mesh", help="noisy mesh (face normals taken from the file if present)")
    p.add_argument("--mode", choices=("ml", "rof"))
    p.add_argument("--denoise-lambda", type=float)
    p.add_argument("--normals-out", help="PLY receiving the denoised normal field")
    _snapshots(p)

    p = sub.add_parser("fit-points", help="fit a mesh to a point cloud")
    _common(p)
    p.add_argument("--mesh", help="initial mesh")
    p.add_argument("--cloud", help="point cloud (PLY or XYZ)")
    p.add_argument("--normal-weight", type=float)
    _snapshots(p)

    p = sub.add_parser("texture-rof", help="TV denoising of a vertex scalar field")
    _common(p)
    p.add_argument("--mesh", help="mesh, optionally carrying a 'quality' vertex field")
    p.add_argument("--field", help="text file with one value per vertex")
    p.add_argument("--field-out", help="text file receiving the denoised field")

    p = sub.add_parser("synth", help="generate synthetic inputs")
    _common(p)
    p.add_argument("shape", choices=SHAPES)
    p.add_argument("--subdiv", type=int)
    p.add_argument("--radius", type=float)
    p.add_argument("--n", type=int, help="resolution or sample count")
    p.add_argument("--sigma", type=float, help="noise level")
    p.add_argument("--size", type=float)
    p.add_argument("--vertex-sigma", type=float)
    return parser


def _snapshots(p):
    p.add_argument("--snapshot-every", type=int)
    p.add_argument("--snapshot-dir")


def read_config(path, allowed):
    """Parse a ``key=value`` file; ``#`` starts a comment."""
    out = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}")
    for num, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{num}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "lambda":
            key = "lam"
        if key not in allowed:
            raise UsageError(f"{path}:{num}: unknown key {key!r}")
        out[key] = value
    return out


def resolve(args, parser):
    """Merge defaults, config file and flags into one validated dict."""
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    cfg = {k: DEFAULTS.get(k) for k in actions}
    if args.config:
        for key, raw in read_config(args.config, set(actions)).items():
            act = actions[key]
            try:
                value = act.type(raw) if act.type else raw
            except ValueError:
                raise UsageError(f"config key {key!r}: invalid value {raw!r}")
            if act.choices and value not in act.choices:
                raise UsageError(f"config key {key!r}: {value!r} not in {sorted(act.choices)}")
            cfg[key] = value
    for key in actions:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    _validate(cfg)
    return cfg


def _validate(cfg):
    def check(cond, msg):
        if not cond:
            raise UsageError(msg)

    check(cfg.get("lam") is None or cfg["lam"] >= 0, "--lambda must be >= 0")
    check(cfg.get("mu") is None or cfg["mu"] > 0, "--mu must be > 0")
    for key in ("admm_iters", "cg_iters"):
        check(cfg.get(key) is None or cfg[key] >= 1, f"--{key.replace('_', '-')} must be >= 1")
    check(cfg.get("max_iters") is None or cfg["max_iters"] >= 0, "--max-iters must be >= 0")
    check(cfg.get("cg_tol") is None or 0 < cfg["cg_tol"] < 1, "--cg-tol must lie in (0, 1)")
    check(cfg.get("seed") is None or 0 <= cfg["seed"] < 2 ** 64, "--seed must fit in 64 bits")
    check(cfg.get("normal_weight") is None or cfg["normal_weight"] >= 0,
          "--normal-weight must be >= 0")
    check(cfg.get("denoise_lambda") is None or cfg["denoise_lambda"] >= 0,
          "--denoise-lambda must be >= 0")
    check(cfg.get("snapshot_every") is None or cfg["snapshot_every"] >= 0,
          "--snapshot-every must be >= 0")
    for key in ("sigma", "vertex_sigma"):
        check(cfg.get(key) is None or cfg[key] >= 0, f"--{key.replace('_', '-')} must be >= 0")
    for key in ("radius", "size"):
        check(cfg.get(key) is None or cfg[key] > 0, f"--{key} must be > 0")
    check(cfg.get("subdiv") is None or 0 <= cfg["subdiv"] <= 8, "--subdiv must lie in [0, 8]")
    check(cfg.get("n") is None or cfg["n"] >= 1, "--n must be >= 1")
    for key in ("out", "trace", "normals_out", "field_out"):
        path = cfg.get(key)
        if path:
            parent = os.path.dirname(os.path.abspath(path))
            check(os.path.isdir(parent), f"output directory {parent} does not exist")
    if cfg.get("snapshot_dir"):
        check(os.path.isdir(cfg["snapshot_dir"]), "--snapshot-dir must exist")


def _require(cfg, *keys):
    for key in keys:
        if not cfg.get(key):
            raise UsageError(f"--{key.replace('_', '-')} is required")


def _load(path):
    if not os.path.isfile(path):
        raise UsageError(f"no such file: {path}")
    return load_mesh_data(path)


def _parse_vec(text):
    try:
        vals = [float(s) for s in text.split(",")]
    except ValueError:
        vals = []
    if len(vals) != 3:
        raise UsageError(f"expected 'x,y,z', got {text!r}")
    return np.array(vals)


# --------------------------------------------------------------- running ----

def _comments(cfg):
    return {k: cfg[k] for k in sorted(cfg) if cfg[k] is not None}


def _optimise(mesh, energy, cfg):
    solver = SolverConfig(mu=cfg["mu"], admm_iters=cfg["admm_iters"],
                          cg_iters=cfg["cg_iters"], cg_tol=cfg["cg_tol"])
    snap = dict(snapshot_every=cfg.get("snapshot_every") or 0,
                snapshot_dir=cfg.get("snapshot_dir"))
    if cfg["method"] == "gd":
        return gd_run(mesh, GdConfig(lam=cfg["lam"], max_iters=cfg["max_iters"], **snap), energy,
                      halt_on_failure=True)
    if cfg["lam"] <= 0:
        raise UsageError("--lambda must be > 0 for lmd and lmtv")
    lm = LmConfig(p=2 if cfg["method"] == "lmd" else 1, lambda0=cfg["lam"],
                  max_outer_iters=cfg["max_iters"], solver=solver, **snap)
    return lm_run(mesh, lm, energy)


def _finish(run, energy, cfg, extra=None):
    ops = build_operators(run.mesh)
    field = energy.assemble(run.mesh, ops).vertex_residual_field(run.mesh.faces)
    comments = _comments(cfg)
    comments["stop_reason"] = run.stop_reason
    if extra:
        comments.update(extra)
    if cfg.get("trace"):
        run.write_trace(cfg["trace"], comments)
    if cfg.get("out"):
        save_mesh(run.mesh, cfg["out"], scalars=field if cfg["out"].endswith(".ply") else None)
    print(f"{run.method}: {len(run.records)} iterations ({run.n_accepted} accepted), "
          f"energy {run.initial_energy:.6g} -> {run.energies[-1]:.6g}, stop: {run.stop_reason}")
    if run.stop_reason in ("breakdown", "degenerate"):
        print(f"shapelm: numerical breakdown ({run.stop_reason})", file=sys.stderr)
        return 2
    return 0


def _target_for(cfg, mesh, fields):
    t = cfg.get("target")
    if t is None:
        if "face_normals" not in fields:
            raise UsageError("--target is required when the mesh carries no face normals")
        return fields["face_normals"]
    if t == "sphere":
        return shapes.radial_face_normals
    if t == "offset-sphere":
        c = _parse_vec(cfg["target_center"])
        return lambda m: shapes.radial_face_normals(m, c)
    if t == "synthetic-cube":
        return shapes.cube_face_normals
    tmesh, tfields = _load(t)
    if "face_normals" not in tfields:
        raise UsageError(f"{t} carries no face normals")
    if tmesh.n_faces != mesh.n_faces:
        raise UsageError(f"{t} has {tmesh.n_faces} faces, mesh has {mesh.n_faces}")
    return tfields["face_normals"]


def _unit(normals, what):
    if np.any(np.abs(np.linalg.norm(normals, axis=1) - 1.0) > 1e-6):
        raise UsageError(f"{what} must be unit length")
    return normals


def cmd_integrate(cfg):
    _require(cfg, "mesh")
    mesh, fields = _load(cfg["mesh"])
    target = _target_for(cfg, mesh, fields)
    if not callable(target):
        if target.shape != (mesh.n_faces, 3):
            raise UsageError("target normal field does not match the mesh")
        _unit(target, "target normals")
    energy = NormalIntegration(target)
    return _finish(_optimise(mesh, energy, cfg), energy, cfg)


def cmd_denoise_normals(cfg):
    _require(cfg, "mesh")
    mesh, fields = _load(cfg["mesh"])
    ops = build_operators(mesh)
    noisy = fields.get("face_normals", ops.face_normals)
    if noisy.shape != (mesh.n_faces, 3):
        raise UsageError("face normal field does not match the mesh")
    _unit(noisy, "face normals")
    clean = denoise_normal_field(mesh, ops, noisy, cfg["mode"], cfg["denoise_lambda"])
    energy = NormalIntegration(clean)
    run = _optimise(mesh, energy, cfg)
    if cfg.get("normals_out"):
        save_mesh(mesh, cfg["normals_out"], face_normals=clean)
    return _finish(run, energy, cfg)


def cmd_fit_points(cfg):
    _require(cfg, "mesh", "cloud")
    mesh, _ = _load(cfg["mesh"])
    if not os.path.isfile(cfg["cloud"]):
        raise UsageError(f"no such file: {cfg['cloud']}")
    pts, nrm = load_point_cloud(cfg["cloud"])
    if nrm is not None:
        norm = np.linalg.norm(nrm, axis=1)
        if np.all(norm > 0):
            nrm = nrm / norm[:, None]
    try:
        cloud = PointCloud(pts, nrm)
        energy = PointFit(cloud, cfg["normal_weight"])
    except ShapeLMError as exc:
        raise UsageError(str(exc))
    run = _optimise(mesh, energy, cfg)
    q = mesh_quality(run.mesh)
    extra = dict(final_min_angle=repr(q.min_angle), final_max_aspect=repr(q.max_aspect),
                 final_self_intersections=q.self_intersection_count)
    print(f"mesh quality: min_angle={q.min_angle:.6g} max_aspect={q.max_aspect:.6g} "
          f"self_intersections={q.self_intersection_count}")
    return _finish(run, energy, cfg, extra)


def cmd_texture_rof(cfg):
    _require(cfg, "mesh")
    mesh, fields = _load(cfg["mesh"])
    if cfg.get("field"):
        if not os.path.isfile(cfg["field"]):
            raise UsageError(f"no such file: {cfg['field']}")
        try:
            values = np.loadtxt(cfg["field"], ndmin=1)
        except ValueError as exc:
            raise UsageError(f"{cfg['field']}: {exc}")
    elif "quality" in fields:
        values = fields["quality"]
    else:
        raise UsageError("--field is required when the mesh carries no 'quality' field")
    try:
        values = check_vertex_field(mesh, values, vector=False)
    except ShapeLMError as exc:
        raise UsageError(str(exc))
    ops = build_operators(mesh)
    system = assemble_scalar_rof(mesh, ops, values)
    solver = SolverConfig(lam=cfg["lam"], mu=cfg["mu"], p=1, admm_iters=cfg["admm_iters"],
                          cg_iters=cfg["cg_iters"], cg_tol=cfg["cg_tol"])
    u, state = solve_subproblem_tv(system, ops, solver)
    if cfg.get("trace"):
        state.write_trace(cfg["trace"])
    if cfg.get("out"):
        save_mesh(mesh, cfg["out"], scalars=u)
    if cfg.get("field_out"):
        save_vertex_field(cfg["field_out"], u)
    print(f"texture-rof: {state.iteration} ADMM iterations, objective {state.objective[-1]:.6g}")


def cmd_synth(cfg):
    _require(cfg, "out")
    shape, out, seed = cfg["shape"], cfg["out"], cfg["seed"]
    n, sigma = cfg.get("n"), cfg.get("sigma")
    if shape == "icosphere":
        save_mesh(shapes.icosphere(cfg["subdiv"], cfg["radius"]), out)
    elif shape == "cube":
        save_mesh(shapes.cube(n or 10, cfg["size"]), out)
    elif shape == "noisy-cube":
        mesh, normals = shapes.noisy_cube(n or 10, 0.2 if sigma is None else sigma, seed,
                                          cfg["vertex_sigma"])
        if cfg["size"] != 1.0:
            mesh = mesh.with_vertices(cfg["size"] * mesh.vertices)
        save_mesh(mesh, out, face_normals=normals)
    elif shape == "torus":
        save_mesh(shapes.torus(n or 32, max((n or 32) // 2, 3)), out)
    elif shape == "cutbox-cloud":
        pts, nrm = shapes.cutbox_cloud(n or 20000, seed)
        save_point_cloud(out, pts, nrm)
    elif shape == "sphere-cloud":
        pts, nrm = shapes.sphere_cloud(n or 5000, cfg["radius"], seed=seed)
        save_point_cloud(out, pts, nrm)
    elif shape == "strip":
        mesh, field = shapes.step_strip()
        save_mesh(mesh, out, scalars=field)
    elif shape == "texture-grid":
        mesh, _, noisy = shapes.texture_grid(n or 48, sigma=20.0 if sigma is None else sigma,
                                             seed=seed)
        save_mesh(mesh, out, scalars=noisy)
    print(f"synth: wrote {shape} to {out}")


COMMANDS = {
    "integrate": cmd_integrate,
    "denoise-normals": cmd_denoise_normals,
    "fit-points": cmd_fit_points,
    "texture-rof": cmd_texture_rof,
    "synth": cmd_synth,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        cfg = resolve(args, parser)
        status = COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"shapelm: error: {exc}", file=sys.stderr)
        return 1
    except BreakdownError as exc:
        print(f"shapelm: numerical breakdown: {exc}", file=sys.stderr)
        return 2
    except (ShapeLMError, OSError) as exc:
        print(f"shapelm: error: {exc}", file=sys.stderr)
        return 1
    return status or 0


if __name__ == "__main__":
    sys.exit(main())
