"""Indexed triangle meshes and their elementary geometry.

A :class:`TriMesh` is immutable: every operation that moves vertices returns
a new mesh that shares the connectivity (and the adjacency built from it).
Vertex fields are plain ``(n,)`` or ``(n, 3)`` arrays and face fields are
``(F, 3)`` arrays; their lengths are checked against the mesh they are used
with.
"""

from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .errors import BoundaryPresent, DegenerateFace, ShapeMismatch, TopologyError

DEGENERACY_EPS = 1e-12
SELF_INTERSECTION_EPS = 1e-10


class TriMesh:
    """Triangle surface with precomputed adjacency.

    Parameters
    ----------
    vertices : array_like, shape (n, 3)
        Vertex positions.
    faces : array_like, shape (F, 3)
        Counter-clockwise vertex index triples.

    Raises
    ------
    TopologyError
        On out-of-range or repeated indices, isolated vertices, edges shared
        by more than two faces, or inconsistent orientation.
    """

    def __init__(self, vertices, faces):
        V = np.array(vertices, dtype=np.float64)
        F = np.array(faces, dtype=np.int64)
        if V.ndim != 2 or V.shape[1] != 3:
            raise ValueError("vertices must have shape (n, 3)")
        if F.ndim != 2 or F.shape[1] != 3:
            if F.size == 0:
                F = F.reshape(0, 3)
            else:
                raise ValueError("faces must have shape (F, 3)")
        n = len(V)
        if F.size and (F.min() < 0 or F.max() >= n):
            raise TopologyError("face index out of range")
        if np.any((F[:, 0] == F[:, 1]) | (F[:, 1] == F[:, 2]) | (F[:, 2] == F[:, 0])):
            raise TopologyError("face with repeated vertex index")
        if n and np.bincount(F.ravel(), minlength=n).min() == 0:
            raise TopologyError("isolated vertex not referenced by any face")
        V.setflags(write=False)
        F.setflags(write=False)
        self._vertices = V
        self._faces = F
        self._build_adjacency()

    @classmethod
    def _from_parts(cls, vertices, like):
        # New geometry, shared (already validated) connectivity.
        obj = cls.__new__(cls)
        V = np.array(vertices, dtype=np.float64)
        if V.shape != like._vertices.shape:
            raise ShapeMismatch("vertex array does not match mesh")
        V.setflags(write=False)
        obj._vertices = V
        obj._faces = like._faces
        obj.__dict__.update({k: v for k, v in like.__dict__.items()
                             if k not in ("_vertices", "_faces")})
        return obj

    def _build_adjacency(self):
        F = self._faces
        n = len(self._vertices)
        nf = len(F)
        src = F.ravel()
        dst = F[:, [1, 2, 0]].ravel()
        directed = src * n + dst
        if len(np.unique(directed)) != len(directed):
            raise TopologyError("inconsistent orientation or duplicated face")
        lo = np.minimum(src, dst)
        hi = np.maximum(src, dst)
        key = lo * n + hi
        uniq, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
        if np.any(counts > 2):
            raise TopologyError("non-manifold edge shared by more than two faces")
        self._edges = np.column_stack([uniq // n, uniq % n])
        self._edge_face_count = counts
        # face across edge k = (f[k], f[k+1]); -1 on the boundary
        reverse = dst * n + src
        order = np.argsort(directed)
        pos = np.searchsorted(directed[order], reverse)
        pos = np.minimum(pos, len(directed) - 1)
        found = directed[order][pos] == reverse
        neighbors = np.full(len(directed), -1, dtype=np.int64)
        neighbors[found] = order[pos[found]] // 3
        self._face_neighbors = neighbors.reshape(nf, 3)
        # one-ring faces in CSR layout
        face_of = np.repeat(np.arange(nf), 3)
        perm = np.argsort(src, kind="stable")
        self._vf_indices = face_of[perm]
        self._vf_indptr = np.concatenate([[0], np.cumsum(np.bincount(src, minlength=n))])

    @property
    def vertices(self):
        return self._vertices

    @property
    def faces(self):
        return self._faces

    @property
    def n_vertices(self):
        return len(self._vertices)

    @property
    def n_faces(self):
        return len(self._faces)

    @property
    def edges(self):
        """Undirected edges as sorted index pairs, shape (E, 2)."""
        return self._edges

    @property
    def boundary_edges(self):
        return self._edges[self._edge_face_count == 1]

    @property
    def is_closed(self):
        return bool(np.all(self._edge_face_count == 2))

    @property
    def face_neighbors(self):
        """Face across each edge ``(f[k], f[k+1])``, ``-1`` on the boundary."""
        return self._face_neighbors

    def vertex_faces(self, i):
        """Indices of the faces in the one-ring of vertex ``i``."""
        return self._vf_indices[self._vf_indptr[i]:self._vf_indptr[i + 1]]

    @property
    def euler_characteristic(self):
        return self.n_vertices - len(self._edges) + self.n_faces

    @property
    def bbox_diagonal(self):
        V = self._vertices
        return float(np.linalg.norm(V.max(axis=0) - V.min(axis=0)))

    def with_vertices(self, vertices):
        """Same connectivity, new vertex positions."""
        return TriMesh._from_parts(vertices, self)

    def __repr__(self):
        return f"TriMesh(n_vertices={self.n_vertices}, n_faces={self.n_faces})"


def check_vertex_field(mesh, values, vector=None):
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != mesh.n_vertices:
        raise ShapeMismatch(
            f"vertex field has {values.shape[0]} entries, mesh has {mesh.n_vertices} vertices")
    if vector is True and values.shape[1:] != (3,):
        raise ShapeMismatch("expected a 3-vector per vertex")
    if vector is False and values.ndim != 1:
        raise ShapeMismatch("expected a scalar per vertex")
    return values


def check_face_field(mesh, values):
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (mesh.n_faces, 3):
        raise ShapeMismatch(
            f"face field has shape {values.shape}, expected ({mesh.n_faces}, 3)")
    return values


def _face_cross(mesh):
    tri = mesh.vertices[mesh.faces]
    return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])


def face_geometry(mesh):
    """Face areas and unit normals.

    Returns
    -------
    areas : ndarray, shape (F,)
    normals : ndarray, shape (F, 3)

    Raises
    ------
    DegenerateFace
        If some area is below ``1e-12 * diag**2`` (bounding-box diagonal).
    """
    cross = _face_cross(mesh)
    norm = np.linalg.norm(cross, axis=1)
    areas = 0.5 * norm
    limit = DEGENERACY_EPS * mesh.bbox_diagonal ** 2
    bad = np.flatnonzero(~(areas > limit))
    if len(bad):
        raise DegenerateFace(f"{len(bad)} degenerate face(s), first is {bad[0]}")
    return areas, cross / norm[:, None]


def vertex_normals(mesh):
    """Area-weighted average of incident face normals, normalised."""
    cross = _face_cross(mesh)
    face_geometry(mesh)  # degeneracy check
    acc = np.zeros((mesh.n_vertices, 3))
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], cross)
    norm = np.linalg.norm(acc, axis=1)
    if np.any(norm == 0):
        raise DegenerateFace("vertex with cancelling incident normals")
    return acc / norm[:, None]


def displace_along_normals(mesh, v, normals):
    """Move every vertex by ``v_i * n_i``; connectivity is unchanged."""
    v = check_vertex_field(mesh, v, vector=False)
    normals = check_vertex_field(mesh, normals, vector=True)
    return mesh.with_vertices(mesh.vertices + v[:, None] * normals)


def corner_angles(mesh):
    """Interior angle at each face corner, shape (F, 3)."""
    tri = mesh.vertices[mesh.faces]
    a = np.roll(tri, -1, axis=1) - tri
    b = np.roll(tri, 1, axis=1) - tri
    sin = np.linalg.norm(np.cross(a, b), axis=2)
    cos = np.einsum("fkc,fkc->fk", a, b)
    return np.arctan2(sin, cos)


def angle_defect_total(mesh):
    """Sum over vertices of ``2*pi`` minus the incident corner angles."""
    if not mesh.is_closed:
        raise BoundaryPresent("angle defect needs a closed mesh")
    angles = np.bincount(mesh.faces.ravel(), weights=corner_angles(mesh).ravel(),
                         minlength=mesh.n_vertices)
    return float(np.sum(2.0 * np.pi - angles))


def enclosed_volume(mesh):
    """Signed volume bounded by a closed, outward oriented mesh."""
    tri = mesh.vertices[mesh.faces]
    return float(np.einsum("fc,fc->f", tri[:, 0], np.cross(tri[:, 1], tri[:, 2])).sum() / 6.0)


def candidate_pairs(mesh):
    """Face pairs with overlapping bounding spheres that share no vertex."""
    tri = mesh.vertices[mesh.faces]
    centroids = tri.mean(axis=1)
    radius = np.linalg.norm(tri - centroids[:, None, :], axis=2).max()
    if mesh.n_faces < 2:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = cKDTree(centroids).query_pairs(2.0 * radius * (1.0 + 1e-9), output_type="ndarray")
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    fa = mesh.faces[pairs[:, 0]]
    fb = mesh.faces[pairs[:, 1]]
    shared = (fa[:, :, None] == fb[:, None, :]).any(axis=(1, 2))
    pairs = pairs[~shared]
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]


def self_intersection_count(mesh, eps=SELF_INTERSECTION_EPS):
    """Number of non-adjacent face pairs whose interiors cross."""
    pairs = candidate_pairs(mesh)
    return int(np.count_nonzero(kernels.intersecting_pairs(mesh.vertices, mesh.faces, pairs, eps)))


class MeshQuality(NamedTuple):
    min_angle: float
    max_aspect: float
    self_intersection_count: int


def mesh_quality(mesh, intersections=True):
    """Minimum corner angle, worst aspect ratio and self-intersection count.

    The aspect ratio of a face is its longest edge divided by its shortest
    altitude. Pass ``intersections=False`` to skip the (costlier) pair test;
    the count is then reported as ``-1``.
    """
    tri = mesh.vertices[mesh.faces]
    edges = np.linalg.norm(np.roll(tri, -1, axis=1) - tri, axis=2)
    longest = edges.max(axis=1)
    double_area = np.linalg.norm(_face_cross(mesh), axis=1)
    with np.errstate(divide="ignore"):
        aspect = longest ** 2 / double_area
    count = self_intersection_count(mesh) if intersections else -1
    return MeshQuality(float(corner_angles(mesh).min()), float(aspect.max()), count)
