"""Inner convex solvers for the regularised local least-squares model.

The subproblem is

    min_v  1/2 |A v - f|^2 + lambda/p * sum_T |T| |grad v|_T|^p,   p in {1, 2},

where the rows of ``(A, f)`` come from a :class:`~shapelm.energies.ResidualSystem`.
For ``p = 2`` a single stacked least-squares solve suffices. For ``p = 1`` an
ADMM (split Bregman) loop alternates a stacked least-squares solve for ``v``,
per-face isotropic shrinkage for the auxiliary gradient ``d`` and a Bregman
update of ``b``. All least-squares solves use CGLS, which only needs products
with the stacked matrix and its transpose.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import BreakdownError


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the inner solvers.

    ``cg_iters`` bounds every CGLS call; with the default of 10 the v-updates
    of the ADMM loop are deliberately inexact.
    """

    lam: float = 1.0
    mu: float = 1.0
    p: int = 1
    admm_iters: int = 30
    cg_iters: int = 10
    cg_tol: float = 1e-6

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if not self.mu > 0:
            raise ValueError("mu must be > 0")
        if self.p not in (1, 2):
            raise ValueError("p must be 1 or 2")
        if self.admm_iters < 1 or self.cg_iters < 1:
            raise ValueError("iteration counts must be positive")
        if not 0 < self.cg_tol < 1:
            raise ValueError("cg_tol must lie in (0, 1)")


@dataclass
class Block:
    """One row block of a stacked system: ``matrix @ x ~ rhs``."""

    matrix: object
    rhs: np.ndarray
    name: str = ""


class StackedSystem:
    """Vertical concatenation of row blocks sharing the same unknown."""

    def __init__(self, blocks):
        self.blocks = [b for b in blocks if b.matrix.shape[0] > 0]
        if not self.blocks:
            raise ValueError("stacked system needs at least one block")
        cols = {b.matrix.shape[1] for b in self.blocks}
        if len(cols) != 1:
            raise ValueError(f"blocks disagree on column count: {sorted(cols)}")
        for b in self.blocks:
            if b.rhs.shape != (b.matrix.shape[0],):
                raise ValueError(f"block {b.name!r}: rhs length does not match rows")
        self.n_cols = cols.pop()
        self.n_rows = sum(b.matrix.shape[0] for b in self.blocks)

    @property
    def shape(self):
        return self.n_rows, self.n_cols

    def matvec(self, x):
        return [b.matrix @ x for b in self.blocks]

    def rmatvec(self, ys):
        out = np.zeros(self.n_cols)
        for b, y in zip(self.blocks, ys):
            out += b.matrix.T @ y
        return out

    def rhs(self):
        return [b.rhs for b in self.blocks]


def _sqnorm(parts):
    return float(sum(np.dot(p, p) for p in parts))


def shrink(g, t):
    """Isotropic soft-thresholding ``g * max(1 - t/|g|, 0)``.

    ``g`` is either one 3-vector or an ``(m, 3)`` array of them.
    """
    if t < 0:
        raise ValueError("threshold must be >= 0")
    g = np.asarray(g, dtype=np.float64)
    if g.ndim == 1:
        return kernels.shrink_rows(g[None, :], float(t))[0]
    return kernels.shrink_rows(g, float(t))


def cgls_solve(system, x0=None, iters=100, tol=1e-6, history=None):
    """Conjugate gradients on the normal equations, without forming them.

    Stops after ``iters`` iterations or once
    ``|M^T (r - M x)| <= tol * |M^T r|``.

    Parameters
    ----------
    system : StackedSystem
    x0 : ndarray, optional
        Warm start; zero by default.
    history : list, optional
        Receives ``|r - M x|`` before the first and after every iteration.

    Raises
    ------
    BreakdownError
        If a non-finite value appears.
    """
    n = system.n_cols
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    rhs = system.rhs()
    resid = [b - a for b, a in zip(rhs, system.matvec(x))]
    s = system.rmatvec(resid)
    ref = np.sqrt(_sqnorm([system.rmatvec(rhs)]))
    gamma = float(s @ s)
    if history is not None:
        history.append(np.sqrt(_sqnorm(resid)))
    if not np.isfinite(gamma):
        raise BreakdownError("non-finite values in CGLS start")
    stop = (tol * ref) ** 2
    p = s.copy()
    for _ in range(iters):
        if gamma <= stop or gamma == 0.0:
            break
        q = system.matvec(p)
        qq = _sqnorm(q)
        if qq == 0.0:
            break
        alpha = gamma / qq
        x += alpha * p
        resid = [r - alpha * qi for r, qi in zip(resid, q)]
        s = system.rmatvec(resid)
        gamma_new = float(s @ s)
        if not (np.isfinite(alpha) and np.isfinite(gamma_new)):
            raise BreakdownError("non-finite values in CGLS iteration")
        if history is not None:
            history.append(np.sqrt(_sqnorm(resid)))
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    return x


@dataclass
class AdmmState:
    """Iterates of the split Bregman loop (``d`` and ``b`` are per-face 3-vectors)."""

    v: np.ndarray
    d: np.ndarray
    b: np.ndarray
    iteration: int = 0
    objective: list = field(default_factory=list)
    primal_residual: list = field(default_factory=list)
    dual_change: list = field(default_factory=list)
    cg_iters: int = 0

    def write_trace(self, path):
        """CSV rows ``iter, objective, primal_residual, dual_change``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "objective", "primal_residual", "dual_change"])
            for k, row in enumerate(zip(self.objective, self.primal_residual,
                                        self.dual_change), 1):
                w.writerow([k] + [repr(float(x)) for x in row])


def _data_blocks(residuals):
    return [Block(m, r, name) for name, m, r in residuals.blocks()]


def data_objective(residuals, v):
    """``1/2 |A v - f|^2`` over the data blocks."""
    return 0.5 * sum(float(np.sum((m @ v - r) ** 2)) for _, m, r in residuals.blocks())


def tv_objective(residuals, ops, v, lam):
    """Data term plus ``lam * sum_T |T| |grad v|_T|``."""
    g = ops.apply_grad(v)
    return data_objective(residuals, v) + lam * float(ops.w_face @ np.linalg.norm(g, axis=1))


def dirichlet_objective(residuals, ops, v, lam):
    """Data term plus ``lam/2 * sum_T |T| |grad v|_T|^2``."""
    g = ops.apply_grad(v)
    return data_objective(residuals, v) + 0.5 * lam * float(ops.w_face @ np.sum(g * g, axis=1))


def solve_subproblem_tv(residuals, ops, cfg, trace_path=None):
    """ADMM for the total-variation regularised subproblem (``p = 1``).

    Starting from ``v = d = b = 0`` each iteration performs

    1. ``v`` <- CGLS on ``[A; s W grad] v = [f; s W (d - b)]`` with
       ``s = sqrt(lam * mu)`` and ``W = diag(sqrt|T|)``, warm started at the
       previous ``v``,
    2. ``d`` <- ``shrink(grad v + b, 1/mu)`` per face,
    3. ``b`` <- ``b + grad v - d``.

    Returns
    -------
    v : ndarray, shape (n,)
    state : AdmmState
    """
    n = ops.n_vertices
    nf = ops.n_faces
    state = AdmmState(v=np.zeros(n), d=np.zeros((nf, 3)), b=np.zeros((nf, 3)))
    data = _data_blocks(residuals)
    if cfg.lam == 0:
        hist = []
        state.v = cgls_solve(StackedSystem(data), None, cfg.cg_iters, cfg.cg_tol, hist)
        state.cg_iters = len(hist) - 1
        state.iteration = 1
        state.objective.append(data_objective(residuals, state.v))
        state.primal_residual.append(0.0)
        state.dual_change.append(0.0)
        return state.v, state
    s = np.sqrt(cfg.lam * cfg.mu)
    sqrt_area3 = np.sqrt(ops.face_weights3)
    reg = sp.diags(s * sqrt_area3) @ ops.grad
    for _ in range(cfg.admm_iters):
        target = s * sqrt_area3 * (state.d - state.b).ravel()
        system = StackedSystem(data + [Block(reg, target, "regularizer")])
        hist = []
        state.v = cgls_solve(system, state.v, cfg.cg_iters, cfg.cg_tol, hist)
        state.cg_iters += len(hist) - 1
        gv = ops.apply_grad(state.v)
        d_old = state.d
        state.d = shrink(gv + state.b, 1.0 / cfg.mu)
        state.b = state.b + gv - state.d
        state.iteration += 1
        state.objective.append(tv_objective(residuals, ops, state.v, cfg.lam))
        state.primal_residual.append(np.sqrt(ops.w_face @ np.sum((gv - state.d) ** 2, axis=1)))
        state.dual_change.append(np.sqrt(ops.w_face @ np.sum((state.d - d_old) ** 2, axis=1)))
    if trace_path is not None:
        state.write_trace(trace_path)
    return state.v, state


def solve_subproblem_dirichlet(residuals, ops, cfg, history=None):
    """Single CGLS solve of ``[A; sqrt(lam) W grad] v = [f; 0]`` (``p = 2``)."""
    blocks = _data_blocks(residuals)
    if cfg.lam > 0:
        reg = sp.diags(np.sqrt(cfg.lam * ops.face_weights3)) @ ops.grad
        blocks.append(Block(reg, np.zeros(reg.shape[0]), "regularizer"))
    return cgls_solve(StackedSystem(blocks), None, cfg.cg_iters, cfg.cg_tol, history)


def solve_subproblem(residuals, ops, cfg):
    """Dispatch on ``cfg.p``; returns ``(v, cg_iterations)``."""
    if cfg.p == 1:
        v, state = solve_subproblem_tv(residuals, ops, cfg)
        return v, state.cg_iters
    hist = []
    v = solve_subproblem_dirichlet(residuals, ops, cfg, hist)
    return v, len(hist) - 1
