"""Piecewise-linear finite elements on triangle meshes.

Functions are represented by their vertex values (hat-function basis). The
surface gradient of such a function is constant per face, which gives a
sparse ``(3F, n)`` operator; rows ``3t .. 3t+2`` hold the x, y, z components
on face ``t``. Norms use lumped quadrature: one third of each face area per
incident vertex, and the face area for face-constant fields.
"""

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp

from .mesh import check_face_field, check_vertex_field, face_geometry


@dataclass(frozen=True)
class FemOperators:
    """Operators for one mesh snapshot.

    Attributes
    ----------
    grad : scipy.sparse.csr_matrix, shape (3F, n)
        Discrete surface gradient.
    w_vertex : ndarray, shape (n,)
        Lumped vertex masses (a third of the one-ring area).
    w_face : ndarray, shape (F,)
        Face areas.
    face_normals : ndarray, shape (F, 3)
    hat_grads : ndarray, shape (F, 3, 3)
        Gradient of the hat function of local vertex ``k`` on each face.
    """

    grad: sp.csr_matrix
    w_vertex: np.ndarray
    w_face: np.ndarray
    face_normals: np.ndarray
    hat_grads: np.ndarray

    @property
    def n_vertices(self):
        return self.grad.shape[1]

    @property
    def n_faces(self):
        return self.grad.shape[0] // 3

    @property
    def face_weights3(self):
        """Face areas repeated per component, matching the rows of ``grad``."""
        return np.repeat(self.w_face, 3)

    def apply_grad(self, v):
        """Face-wise gradient of a scalar vertex field, shape (F, 3)."""
        return (self.grad @ v).reshape(-1, 3)

    def divergence(self, g):
        """Weak divergence ``grad^T diag(|T|) g`` of a face field (vertex-integrated)."""
        return self.grad.T @ (self.face_weights3 * np.asarray(g).ravel())


def hat_gradients(mesh):
    """Per-face gradients of the three hat functions.

    The gradient of the hat function at local vertex ``k`` is
    ``n x e_k / (2|T|)`` with ``e_k`` the counter-clockwise edge opposite to
    that vertex; it reproduces affine functions exactly.

    Returns
    -------
    grads : ndarray, shape (F, 3, 3)
    areas : ndarray, shape (F,)
    normals : ndarray, shape (F, 3)
    """
    areas, normals = face_geometry(mesh)
    tri = mesh.vertices[mesh.faces]
    opposite = np.roll(tri, -2, axis=1) - np.roll(tri, -1, axis=1)
    grads = np.cross(normals[:, None, :], opposite) / (2.0 * areas)[:, None, None]
    return grads, areas, normals


def _assemble_grad(faces, grads, n):
    nf = len(faces)
    rows = (3 * np.arange(nf)[:, None, None] + np.arange(3)[None, None, :])
    rows = np.broadcast_to(rows, (nf, 3, 3))
    cols = np.broadcast_to(faces[:, :, None], (nf, 3, 3))
    G = sp.csr_matrix((grads.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * nf, n))
    G.sum_duplicates()
    G.eliminate_zeros()
    return G


def build_gradient(mesh):
    """Sparse surface gradient, shape ``(3F, n)``."""
    grads, _, _ = hat_gradients(mesh)
    return _assemble_grad(mesh.faces, grads, mesh.n_vertices)


def _lumped(faces, areas, n):
    return np.bincount(faces.ravel(), weights=np.repeat(areas / 3.0, 3), minlength=n)


def build_mass(mesh):
    """Lumped vertex masses and face areas."""
    areas, _ = face_geometry(mesh)
    return _lumped(mesh.faces, areas, mesh.n_vertices), areas


def build_operators(mesh):
    grads, areas, normals = hat_gradients(mesh)
    return FemOperators(
        grad=_assemble_grad(mesh.faces, grads, mesh.n_vertices),
        w_vertex=_lumped(mesh.faces, areas, mesh.n_vertices),
        w_face=areas,
        face_normals=normals,
        hat_grads=grads,
    )


def l2_norm_vertex(field, ops):
    """Squared lumped L2 norm ``sum_i w_i |v_i|^2`` of a vertex field."""
    field = np.asarray(field, dtype=np.float64)
    if field.shape[0] != ops.n_vertices:
        raise ValueError("vertex field does not match operators")
    sq = field ** 2 if field.ndim == 1 else np.sum(field ** 2, axis=1)
    return float(ops.w_vertex @ sq)


def l2_norm_face(field, ops):
    """Squared L2 norm ``sum_T |T| |g_T|^2`` of a face-constant 3-vector field."""
    field = np.asarray(field, dtype=np.float64).reshape(-1, 3)
    if len(field) != ops.n_faces:
        raise ValueError("face field does not match operators")
    return float(ops.w_face @ np.sum(field ** 2, axis=1))


def stiffness(ops, weighted=True):
    """Stiffness matrix ``grad^T diag(|T|) grad``.

    With ``weighted=False`` the unweighted product ``grad^T grad`` is returned
    instead, for comparison only.
    """
    G = ops.grad
    if weighted:
        K = G.T @ sp.diags(ops.face_weights3) @ G
    else:
        K = G.T @ G
    K = sp.csr_matrix(K)
    K.eliminate_zeros()
    return K


def mean_curvature_vector(mesh, ops, K=None):
    """Mean curvature vector ``H_i = (K X)_i / w_i`` per vertex, shape (n, 3).

    ``|H|`` approximates the sum of principal curvatures; ``H`` points along
    the outward normal on convex surfaces.
    """
    if K is None:
        K = stiffness(ops)
    return (K @ mesh.vertices) / ops.w_vertex[:, None]


def mean_curvature(mesh, ops, normals, K=None):
    """Signed scalar mean curvature ``sign(<H, n>) |H|`` (positive on spheres)."""
    normals = check_vertex_field(mesh, normals, vector=True)
    H = mean_curvature_vector(mesh, ops, K)
    sign = np.where(np.einsum("ij,ij->i", H, normals) < 0, -1.0, 1.0)
    return sign * np.linalg.norm(H, axis=1)


def face_to_vertex(mesh, ops, face_values):
    """Area-weighted average of face values over each vertex one-ring."""
    face_values = check_face_field(mesh, face_values)
    acc = np.zeros((mesh.n_vertices, 3))
    weighted = face_values * ops.w_face[:, None]
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], weighted)
    return acc / (3.0 * ops.w_vertex)[:, None]


def vertex_to_face(mesh, vertex_values):
    """Barycentric (centroid) value of a vertex field on every face."""
    vertex_values = check_vertex_field(mesh, vertex_values)
    return vertex_values[mesh.faces].mean(axis=1)


def write_matrix_market(path, matrix, comment=""):
    """Dump a sparse matrix in coordinate Matrix Market format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), comment=comment, field="real",
                     symmetry="general")
