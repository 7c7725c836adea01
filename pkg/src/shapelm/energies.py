"""Residual blocks of separable quadratic shape energies and their linearisations.

Every shape energy handled here has the form

    E(S) = 1/2 * integral ( |r_x(x)|^2 + |r_n(n)|^2 [+ r_c(kappa)^2] ) dS

and is assembled, for one mesh snapshot, into a :class:`ResidualSystem`:
weighted residual vectors together with their derivative with respect to a
normal velocity ``v`` (vertex ``i`` moves by ``v_i * n_i``). The derivatives
are the exact ones of the discrete residuals, so a Taylor test against
displaced meshes shows second-order agreement.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import BoundaryPresent, DomainError, EmptyCloud, UnorientedCloud, ZeroVector
from .fem import face_to_vertex, mean_curvature_vector, stiffness, vertex_to_face
from .mesh import check_face_field, check_vertex_field, vertex_normals


@dataclass
class ResidualSystem:
    """Linearised residuals of one snapshot.

    The unknown is a vertex scalar ``v``. Each block contributes rows
    ``sqrt(weight) * mass * (r + J v)``; :meth:`blocks` returns them as
    ``(name, matrix, rhs)`` with ``rhs = -sqrt(weight) * mass * r`` so that the
    local model is ``1/2 |matrix @ v - rhs|^2``.

    Attributes
    ----------
    sqrt_w_vertex, sqrt_w_face : ndarray
        Square roots of lumped vertex masses and face areas.
    r_x, j_x : ndarray (n, 3), optional
        Point residuals and their derivative per unit normal speed.
    r_s, j_s : ndarray (n,), optional
        Scalar vertex residuals (static-surface problems).
    r_n : ndarray (F, 3), optional
        Face normal residuals.
    J_n : ndarray (F, 3, 3), optional
        Jacobian of ``r_n`` with respect to the normal; identity when None.
    dn_dv : sparse (3F, n), optional
        Derivative of the face normals with respect to ``v``.
    r_c : ndarray (n,), optional
        Curvature residuals.
    J_c : sparse (n, n), optional
        Their derivative with respect to ``v``.
    """

    sqrt_w_vertex: np.ndarray
    sqrt_w_face: np.ndarray
    r_x: np.ndarray = None
    j_x: np.ndarray = None
    x_weight: float = 1.0
    r_s: np.ndarray = None
    j_s: np.ndarray = None
    r_n: np.ndarray = None
    J_n: np.ndarray = None
    dn_dv: sp.spmatrix = None
    n_weight: float = 1.0
    r_c: np.ndarray = None
    J_c: sp.spmatrix = None
    dsw_vertex: sp.spmatrix = None
    dsw_face: sp.spmatrix = None

    @property
    def n_vertices(self):
        return len(self.sqrt_w_vertex)

    @property
    def n_faces(self):
        return len(self.sqrt_w_face)

    def merged(self, other):
        """Combine with a system of the same snapshot holding other blocks."""
        out = ResidualSystem(self.sqrt_w_vertex, self.sqrt_w_face)
        for name in ("r_x", "j_x", "x_weight", "r_s", "j_s", "r_n", "J_n", "dn_dv",
                     "n_weight", "r_c", "J_c", "dsw_vertex", "dsw_face"):
            mine = getattr(self, name)
            theirs = getattr(other, name)
            if name.endswith("weight"):
                setattr(out, name, mine if self._has(name) else theirs)
            else:
                setattr(out, name, mine if mine is not None else theirs)
        return out

    def _has(self, weight_name):
        return {"x_weight": self.r_x, "n_weight": self.r_n}[weight_name] is not None

    def weighted_residuals(self):
        """``(name, weighted residual vector)`` pairs."""
        out = []
        if self.r_x is not None:
            out.append(("point", np.sqrt(self.x_weight) * (self.sqrt_w_vertex[:, None] * self.r_x).ravel()))
        if self.r_s is not None:
            out.append(("scalar", self.sqrt_w_vertex * self.r_s))
        if self.r_n is not None:
            out.append(("normal", np.sqrt(self.n_weight) * (self.sqrt_w_face[:, None] * self.r_n).ravel()))
        if self.r_c is not None:
            out.append(("curvature", self.sqrt_w_vertex * self.r_c))
        return out

    def blocks(self, weight_terms=False):
        """Row blocks ``(name, matrix, rhs)`` of the local least-squares model.

        By default the quadrature weights are held fixed (Gauss-Newton model).
        With ``weight_terms=True`` the matrices also contain the derivative of
        the weights, which requires :func:`attach_weight_derivatives`.
        """
        n = self.n_vertices
        out = []
        if weight_terms and (self.dsw_vertex is None or self.dsw_face is None):
            raise ValueError("weight derivatives are not attached")
        if self.r_x is not None:
            rows = np.arange(3 * n)
            cols = np.repeat(np.arange(n), 3)
            vals = (self.sqrt_w_vertex[:, None] * self.j_x).ravel()
            M = sp.csr_matrix((vals, (rows, cols)), shape=(3 * n, n))
            if weight_terms:
                rep = sp.csr_matrix(self.dsw_vertex)[cols]
                M = M + sp.diags(self.r_x.ravel()) @ rep
            out.append(("point", np.sqrt(self.x_weight) * M))
        if self.r_s is not None:
            out.append(("scalar", sp.diags(self.sqrt_w_vertex * self.j_s).tocsr()))
        if self.r_n is not None:
            D = self.dn_dv
            if self.J_n is not None:
                D = sp.block_diag(list(self.J_n), format="csr") @ D
            M = sp.diags(np.repeat(self.sqrt_w_face, 3)) @ D
            if weight_terms:
                rep = sp.csr_matrix(self.dsw_face)[np.repeat(np.arange(self.n_faces), 3)]
                M = M + sp.diags(self.r_n.ravel()) @ rep
            out.append(("normal", np.sqrt(self.n_weight) * M))
        if self.r_c is not None:
            M = sp.diags(self.sqrt_w_vertex) @ self.J_c
            if weight_terms:
                M = M + sp.diags(self.r_c) @ self.dsw_vertex
            out.append(("curvature", M))
        res = dict(self.weighted_residuals())
        return [(name, M, -res[name]) for name, M in out]

    def energy(self):
        """``1/2`` times the squared norm of all weighted residuals."""
        return 0.5 * sum(float(r @ r) for _, r in self.weighted_residuals())

    def vertex_residual_field(self, faces):
        """Per-vertex residual magnitude, for colour-mapped export."""
        n = self.n_vertices
        field = np.zeros(n)
        if self.r_x is not None:
            field += self.x_weight * np.sum(self.r_x ** 2, axis=1)
        if self.r_s is not None:
            field += self.r_s ** 2
        if self.r_c is not None:
            field += self.r_c ** 2
        if self.r_n is not None:
            per_face = self.n_weight * np.sum(self.r_n ** 2, axis=1) * self.sqrt_w_face ** 2
            acc = np.bincount(faces.ravel(), weights=np.repeat(per_face, 3), minlength=n)
            area = np.bincount(faces.ravel(), weights=np.repeat(self.sqrt_w_face ** 2, 3),
                               minlength=n)
            field += acc / area
        return np.sqrt(field)


def _base(ops):
    return ResidualSystem(np.sqrt(ops.w_vertex), np.sqrt(ops.w_face))


def area_derivative(mesh, ops, normals):
    """Sparse ``(F, n)`` derivative of the face areas w.r.t. normal speed."""
    F = mesh.faces
    dA = ops.w_face[:, None] * np.einsum("fjc,fjc->fj", ops.hat_grads, normals[F])
    rows = np.repeat(np.arange(len(F)), 3)
    return sp.csr_matrix((dA.ravel(), (rows, F.ravel())), shape=(len(F), mesh.n_vertices))


def attach_weight_derivatives(system, mesh, ops, normals):
    """Store the derivatives of the square-root quadrature weights on ``system``."""
    dA = area_derivative(mesh, ops, normals)
    F = mesh.faces
    inc = sp.csr_matrix((np.full(F.size, 1.0 / 3.0),
                         (F.ravel(), np.repeat(np.arange(len(F)), 3))),
                        shape=(mesh.n_vertices, len(F)))
    system.dsw_face = sp.diags(0.5 / system.sqrt_w_face) @ dA
    system.dsw_vertex = sp.diags(0.5 / system.sqrt_w_vertex) @ (inc @ dA)
    return system


def normal_derivative(mesh, ops, normals, linearization="exact"):
    """Sparse ``(3F, n)`` derivative of the face normals w.r.t. normal speed.

    Moving vertex ``j`` by ``v_j * m_j`` changes the normal of face ``T`` by
    ``-grad(phi_j) <n_T, m_j> v_j``. With ``linearization="gradient"`` the
    factor ``<n_T, m_j>`` is dropped, giving ``-grad``.
    """
    g = ops.hat_grads
    if linearization == "exact":
        dots = np.einsum("fc,fkc->fk", ops.face_normals, normals[mesh.faces])
        g = g * dots[:, :, None]
    elif linearization != "gradient":
        raise ValueError(f"unknown linearization {linearization!r}")
    nf = mesh.n_faces
    rows = np.broadcast_to(3 * np.arange(nf)[:, None, None] + np.arange(3), (nf, 3, 3))
    cols = np.broadcast_to(mesh.faces[:, :, None], (nf, 3, 3))
    D = sp.csr_matrix((-g.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * nf, mesh.n_vertices))
    D.sum_duplicates()
    return D


def assemble_normal_residual(mesh, ops, target, normals=None, weight=1.0,
                             linearization="exact"):
    """Face block of the normal-field energy ``1/2 int |n - n_d|^2``.

    Parameters
    ----------
    target : ndarray, shape (F, 3)
        Desired unit normal per face.
    normals : ndarray, shape (n, 3), optional
        Vertex normals along which the surface moves (computed if omitted).
    weight : float
        Scalar factor on this energy.
    """
    target = check_face_field(mesh, target)
    if normals is None:
        normals = vertex_normals(mesh)
    sysm = _base(ops)
    sysm.r_n = ops.face_normals - target
    sysm.dn_dv = normal_derivative(mesh, ops, normals, linearization)
    sysm.n_weight = float(weight)
    return sysm


class PointCloud:
    """Points with optional unit normals and a kd-tree for closest-point queries."""

    def __init__(self, points, normals=None):
        points = np.array(points, dtype=np.float64).reshape(-1, 3)
        if len(points) == 0:
            raise EmptyCloud("point cloud is empty")
        if normals is not None:
            normals = np.array(normals, dtype=np.float64).reshape(-1, 3)
            if normals.shape != points.shape:
                raise ValueError("normals must match points")
            if np.any(np.abs(np.linalg.norm(normals, axis=1) - 1.0) > 1e-6):
                raise ValueError("cloud normals must be unit length")
        self.points = points
        self.normals = normals
        self.tree = cKDTree(points)

    def __len__(self):
        return len(self.points)

    @property
    def oriented(self):
        return self.normals is not None

    def nearest(self, x):
        """Indices of and distances to the closest cloud points."""
        dist, idx = self.tree.query(np.asarray(x, dtype=np.float64))
        return idx, dist


def assemble_point_residual(mesh, ops, cloud, normal_weight=0.0, normals=None,
                            linearization="exact"):
    """Point-distance energy, optionally screened by the cloud normals.

    Closest points are queried once and frozen, so ``r_x = x - x_hat`` has
    derivative ``m_i`` (the vertex normal) per unit speed. With
    ``normal_weight > 0`` a normal block targets, per face, the normal of the
    cloud point nearest to the face centroid.
    """
    if normal_weight < 0:
        raise ValueError("normal_weight must be >= 0")
    if normal_weight > 0 and not cloud.oriented:
        raise UnorientedCloud("normal_weight > 0 needs an oriented cloud")
    if normals is None:
        normals = vertex_normals(mesh)
    idx, _ = cloud.nearest(mesh.vertices)
    sysm = _base(ops)
    sysm.r_x = mesh.vertices - cloud.points[idx]
    sysm.j_x = np.array(normals)
    if normal_weight > 0:
        centroids = mesh.vertices[mesh.faces].mean(axis=1)
        fidx, _ = cloud.nearest(centroids)
        face = assemble_normal_residual(mesh, ops, cloud.normals[fidx], normals,
                                        normal_weight, linearization)
        sysm = sysm.merged(face)
    return sysm


def _curvature_jacobian(mesh, ops, normals, H, kappa):
    # Derivative of kappa_i = s_i |H_i|, H = (K X) / w, for x_j += v_j m_j.
    # (K X)_i sums the area gradients g_k = |T| grad(phi_k) = n x e_k / 2.
    F = mesh.faces
    nf = len(F)
    tri = mesh.vertices[F]
    n_T = ops.face_normals
    e = np.roll(tri, -2, axis=1) - np.roll(tri, -1, axis=1)       # e_k, (F, 3, 3)
    m = normals[F]                                                # m_j, (F, 3, 3)
    gphi = ops.hat_grads
    nm = np.einsum("fc,fjc->fj", n_T, m)                          # <n, m_j>
    # term from the rotation of n: -1/2 <n, m_j> grad(phi_j) x e_k
    rot = -0.5 * nm[:, None, :, None] * np.cross(gphi[:, None, :, :], e[:, :, None, :])
    # term from the edge change: 1/2 s_kj n x m_j, s = +1 for j = k+2, -1 for j = k+1
    nxm = 0.5 * np.cross(n_T[:, None, :], m)                      # (F, 3(j), 3)
    sgn = np.zeros((3, 3))
    for k in range(3):
        sgn[k, (k + 2) % 3] = 1.0
        sgn[k, (k + 1) % 3] = -1.0
    C = rot + sgn[None, :, :, None] * nxm[:, None, :, :]          # (F, k, j, 3)
    Hn = np.linalg.norm(H, axis=1)
    unit = np.where(Hn[:, None] > 1e-14, H / np.maximum(Hn, 1e-300)[:, None], normals)
    sign = np.where(kappa < 0, -1.0, 1.0)
    u = sign[:, None] * unit                                      # (n, 3)
    w = ops.w_vertex
    rows_v = F[:, :, None]
    vals = np.einsum("fkc,fkjc->fkj", u[F], C) / w[F][:, :, None]
    dA = ops.w_face[:, None] * np.einsum("fjc,fjc->fj", gphi, m)  # d|T| / dv_j
    vals -= (kappa[F] / (3.0 * w[F]))[:, :, None] * dA[:, None, :]
    rows = np.broadcast_to(rows_v, (nf, 3, 3))
    cols = np.broadcast_to(F[:, None, :], (nf, 3, 3))
    J = sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                      shape=(mesh.n_vertices, mesh.n_vertices))
    J.sum_duplicates()
    return J


def assemble_curvature_residual(mesh, ops, normals=None, kind="willmore",
                                linearization="exact"):
    """Willmore block ``r_c = kappa`` (signed mean curvature).

    With ``linearization="continuum"`` the derivative is the operator
    ``K / w`` (the discrete counterpart of minus the Laplace-Beltrami
    operator) instead of the exact derivative of the discrete curvature.
    """
    if kind != "willmore":
        raise ValueError(f"unknown curvature energy {kind!r}")
    if not mesh.is_closed:
        raise BoundaryPresent("curvature residual needs a closed mesh")
    if normals is None:
        normals = vertex_normals(mesh)
    K = stiffness(ops)
    H = mean_curvature_vector(mesh, ops, K)
    kappa = np.where(np.einsum("ij,ij->i", H, normals) < 0, -1.0, 1.0) * np.linalg.norm(H, axis=1)
    sysm = _base(ops)
    sysm.r_c = kappa
    if linearization == "exact":
        sysm.J_c = _curvature_jacobian(mesh, ops, normals, H, kappa)
    elif linearization == "continuum":
        sysm.J_c = sp.diags(1.0 / ops.w_vertex) @ K
    else:
        raise ValueError(f"unknown linearization {linearization!r}")
    return sysm


def assemble_scalar_rof(mesh, ops, observed):
    """Identity data term ``1/2 |u - u_obs|^2`` for a scalar field on a static surface."""
    observed = check_vertex_field(mesh, observed, vector=False)
    sysm = _base(ops)
    sysm.r_s = -observed
    sysm.j_s = np.ones(mesh.n_vertices)
    return sysm


def denoise_normal_field(mesh, ops, noisy, mode, lam, cfg=None):
    """Smooth a per-face unit normal field.

    The field is averaged onto vertices, each Cartesian component is
    regularised (``mode="ml"``: Dirichlet, ``mode="rof"``: total variation),
    then the result is averaged back onto faces and re-normalised.
    """
    from .admm import SolverConfig, solve_subproblem  # local: admm has no energies import

    noisy = check_face_field(mesh, noisy)
    if mode not in ("ml", "rof"):
        raise ValueError(f"unknown denoising mode {mode!r}")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if lam == 0:
        return noisy.copy()
    if cfg is None:
        cfg = (SolverConfig(lam=lam, p=2, cg_iters=500, cg_tol=1e-8) if mode == "ml"
               else SolverConfig(lam=lam, p=1, mu=1.0, admm_iters=60, cg_iters=30))
    else:
        cfg = SolverConfig(lam=lam, mu=cfg.mu, p=2 if mode == "ml" else 1,
                           admm_iters=cfg.admm_iters, cg_iters=cfg.cg_iters, cg_tol=cfg.cg_tol)
    u_obs = face_to_vertex(mesh, ops, noisy)
    u = np.empty_like(u_obs)
    for c in range(3):
        u[:, c], _ = solve_subproblem(assemble_scalar_rof(mesh, ops, u_obs[:, c]), ops, cfg)
    out = vertex_to_face(mesh, u)
    norm = np.linalg.norm(out, axis=1)
    if np.any(norm < 1e-12):
        raise ZeroVector("denoised normal vanished on some face")
    return out / norm[:, None]


def hernandez_weight(s, sigma):
    """``1 - exp(-tan(pi/4 (s - 1))^2 / sigma^2)``, decreasing from 1 at s=-1 to 0 at s=1."""
    s = np.asarray(s, dtype=np.float64)
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if np.any((s < -1.0) | (s > 1.0)):
        raise DomainError("correlation outside [-1, 1]")
    t = np.tan(0.25 * np.pi * (s - 1.0))
    out = -np.expm1(-(t * t) / sigma ** 2)
    return float(out) if out.ndim == 0 else out


def ncc(a, b):
    """Normalised cross-correlation (cosine of the angle) of two feature vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("feature vectors differ in length")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("ncc of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


# ------------------------------------------------------- energy descriptors ----

class NormalIntegration:
    """``E_n = 1/2 int |n - n_d|^2`` with a fixed or mesh-dependent target.

    ``target`` is an ``(F, 3)`` array or a callable ``mesh -> (F, 3)``.
    """

    name = "normal"

    def __init__(self, target, linearization="exact"):
        self.target = target
        self.linearization = linearization

    def target_normals(self, mesh):
        t = self.target(mesh) if callable(self.target) else self.target
        return check_face_field(mesh, t)

    def assemble(self, mesh, ops, normals=None):
        return assemble_normal_residual(mesh, ops, self.target_normals(mesh), normals,
                                        linearization=self.linearization)

    def gd_terms(self, mesh, ops, normals):
        """Pointwise cost per vertex and normal speed ``-div(n - n_d)``."""
        diff = ops.face_normals - self.target_normals(mesh)
        phi_face = 0.5 * np.sum(diff ** 2, axis=1)
        phi = np.bincount(mesh.faces.ravel(), weights=np.repeat(phi_face * ops.w_face, 3),
                          minlength=mesh.n_vertices) / (3.0 * ops.w_vertex)
        speed = -ops.divergence(diff) / ops.w_vertex
        return phi, speed


class PointFit:
    """``E_x = 1/2 int |x - x_hat|^2``, optionally screened by cloud normals."""

    name = "points"

    def __init__(self, cloud, normal_weight=0.0, linearization="exact"):
        if normal_weight > 0 and not cloud.oriented:
            raise UnorientedCloud("normal_weight > 0 needs an oriented cloud")
        self.cloud = cloud
        self.normal_weight = float(normal_weight)
        self.linearization = linearization

    def assemble(self, mesh, ops, normals=None):
        return assemble_point_residual(mesh, ops, self.cloud, self.normal_weight, normals,
                                       self.linearization)

    def gd_terms(self, mesh, ops, normals):
        idx, _ = self.cloud.nearest(mesh.vertices)
        r = mesh.vertices - self.cloud.points[idx]
        phi = 0.5 * np.sum(r ** 2, axis=1)
        speed = np.einsum("ij,ij->i", r, normals)
        if self.normal_weight > 0:
            centroids = mesh.vertices[mesh.faces].mean(axis=1)
            fidx, _ = self.cloud.nearest(centroids)
            diff = ops.face_normals - self.cloud.normals[fidx]
            speed = speed - self.normal_weight * ops.divergence(diff) / ops.w_vertex
        return phi, speed


class Willmore:
    """``E_W = 1/2 int kappa^2`` (Newton-type steps only)."""

    name = "willmore"

    def __init__(self, linearization="exact"):
        self.linearization = linearization

    def assemble(self, mesh, ops, normals=None):
        return assemble_curvature_residual(mesh, ops, normals, linearization=self.linearization)

    def gd_terms(self, mesh, ops, normals):
        raise NotImplementedError("gradient descent supports normal and point energies only")
