"""Synthetic meshes, point clouds and fields used by tests and ``synth``."""

import numpy as np

from .mesh import TriMesh, face_geometry, vertex_normals


def rng(seed):
    """Explicitly seeded PCG64 generator."""
    return np.random.Generator(np.random.PCG64(np.uint64(seed)))


def _icosahedron():
    t = (1.0 + np.sqrt(5.0)) / 2.0
    V = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    F = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return V / np.linalg.norm(V, axis=1, keepdims=True), F


def icosphere(subdiv=3, radius=1.0, center=(0.0, 0.0, 0.0)):
    """Subdivided icosahedron with ``10 * 4**subdiv + 2`` vertices."""
    V, F = _icosahedron()
    for _ in range(subdiv):
        n = len(V)
        e = np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]])
        key = np.minimum(e[:, 0], e[:, 1]) * n + np.maximum(e[:, 0], e[:, 1])
        uniq, inv = np.unique(key, return_inverse=True)
        a, b = uniq // n, uniq % n
        mid = V[a] + V[b]
        V = np.vstack([V, mid / np.linalg.norm(mid, axis=1, keepdims=True)])
        m = inv.reshape(3, -1) + n
        m01, m12, m20 = m
        F = np.concatenate([
            np.column_stack([F[:, 0], m01, m20]),
            np.column_stack([F[:, 1], m12, m01]),
            np.column_stack([F[:, 2], m20, m12]),
            np.column_stack([m01, m12, m20]),
        ])
    return TriMesh(radius * V + np.asarray(center, dtype=np.float64), F)


def _grid_faces(nu, nv, wrap_u=False, wrap_v=False):
    """Split every cell of a (nu+1) x (nv+1) lattice along its main diagonal."""
    cols_u = nu if wrap_u else nu + 1
    cols_v = nv if wrap_v else nv + 1

    def idx(i, j):
        return (i % cols_u) * cols_v + (j % cols_v)

    i, j = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    i, j = i.ravel(), j.ravel()
    a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
    return np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])


def grid(nx, ny, size=(1.0, 1.0), origin=(0.0, 0.0)):
    """Flat rectangle in the ``z = 0`` plane with normal ``+z``."""
    x = origin[0] + np.linspace(0.0, size[0], nx + 1)
    y = origin[1] + np.linspace(0.0, size[1], ny + 1)
    X, Y = np.meshgrid(x, y, indexing="ij")
    V = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    return TriMesh(V, _grid_faces(nx, ny))


def torus(nu=32, nv=16, major=1.0, minor=0.35):
    u = np.linspace(0.0, 2 * np.pi, nu, endpoint=False)
    w = np.linspace(0.0, 2 * np.pi, nv, endpoint=False)
    U, W = np.meshgrid(u, w, indexing="ij")
    ring = major + minor * np.cos(W)
    V = np.column_stack([(ring * np.cos(U)).ravel(), (ring * np.sin(U)).ravel(),
                         (minor * np.sin(W)).ravel()])
    return TriMesh(V, _grid_faces(nu, nv, wrap_u=True, wrap_v=True))


def cube(n=1, size=1.0):
    """Axis-aligned cube centred at the origin, ``n`` segments per edge.

    Every cell diagonal runs from the (-, -) to the (+, +) corner of its face,
    so the corners (-h, -h, -h) and (h, h, h) are symmetric for ``n = 1``.
    """
    h = 0.5 * size
    s = np.linspace(-h, h, n + 1)
    S, T = np.meshgrid(s, s, indexing="ij")
    S, T = S.ravel(), T.ravel()
    cell = _grid_faces(n, n)
    verts, faces = [], []
    offset = 0
    for axis in range(3):
        u, w = [a for a in range(3) if a != axis]
        for sign in (-1.0, 1.0):
            P = np.zeros((len(S), 3))
            P[:, axis] = sign * h
            P[:, u] = S
            P[:, w] = T
            Fc = cell.copy()
            cr = np.cross(P[Fc[0, 1]] - P[Fc[0, 0]], P[Fc[0, 2]] - P[Fc[0, 0]])
            if cr[axis] * sign < 0:
                Fc = Fc[:, [0, 2, 1]]
            verts.append(P)
            faces.append(Fc + offset)
            offset += len(P)
    V = np.vstack(verts)
    F = np.vstack(faces)
    key = np.round(V / size * 4 * n * 1e6).astype(np.int64)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inv = inv.ravel()
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return TriMesh(V[first[order]], remap[inv][F])


def cube_face_normals(mesh):
    """Normal of the nearest cube side for every face centroid."""
    c = mesh.vertices[mesh.faces].mean(axis=1)
    axis = np.argmax(np.abs(c), axis=1)
    n = np.zeros_like(c)
    n[np.arange(len(c)), axis] = np.sign(c[np.arange(len(c)), axis])
    return n


def radial_face_normals(mesh, center=(0.0, 0.0, 0.0)):
    c = mesh.vertices[mesh.faces].mean(axis=1) - np.asarray(center, dtype=np.float64)
    return c / np.linalg.norm(c, axis=1, keepdims=True)


def perturb_vertices(mesh, sigma, seed):
    """Gaussian displacement of every vertex along its normal."""
    noise = rng(seed).normal(0.0, sigma, mesh.n_vertices)
    return mesh.with_vertices(mesh.vertices + noise[:, None] * vertex_normals(mesh))


def noisy_normals(normals, sigma, seed):
    """Add isotropic Gaussian noise to unit vectors and re-normalise."""
    noisy = normals + rng(seed).normal(0.0, sigma, normals.shape)
    return noisy / np.linalg.norm(noisy, axis=1, keepdims=True)


def noisy_cube(n=10, sigma=0.2, seed=1, vertex_sigma=0.0):
    """Cube mesh (optionally jittered) plus a noisy per-face normal field."""
    mesh = cube(n)
    if vertex_sigma > 0:
        mesh = perturb_vertices(mesh, vertex_sigma, seed)
    _, normals = face_geometry(mesh)
    return mesh, noisy_normals(normals, sigma, seed + 1)


def sphere_cloud(n, radius=1.0, center=(0.0, 0.0, 0.0), seed=0):
    """Uniform random samples on a sphere with outward normals."""
    p = rng(seed).normal(size=(n, 3))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    return radius * p + np.asarray(center, dtype=np.float64), p


def cutbox_cloud(n, seed=0, half=1.0, cut=2.0):
    """Oriented samples on the box ``[-half, half]^3`` minus the corner ``x+y+z > cut``."""
    g = rng(seed)
    corner_leg = 3.0 * half - cut
    cut_area = np.sqrt(3.0) / 2.0 * corner_leg ** 2
    box_area = 24.0 * half ** 2 - 1.5 * corner_leg ** 2
    n_cut = int(round(n * cut_area / (cut_area + box_area)))
    n_box = n - n_cut
    pts, nrm = [], []
    got = 0
    while got < n_box:
        m = 2 * (n_box - got) + 16
        side = g.integers(0, 6, m)
        axis, sign = side // 2, np.where(side % 2 == 0, -1.0, 1.0)
        p = g.uniform(-half, half, (m, 3))
        p[np.arange(m), axis] = sign * half
        keep = p.sum(axis=1) <= cut
        q = np.zeros((m, 3))
        q[np.arange(m), axis] = sign
        p, q = p[keep][: n_box - got], q[keep][: n_box - got]
        pts.append(p)
        nrm.append(q)
        got += len(p)
    # corner triangle of the cut plane
    a = np.array([half, half, cut - 2 * half])
    b = np.array([half, cut - 2 * half, half])
    c = np.array([cut - 2 * half, half, half])
    r1, r2 = g.uniform(size=(2, n_cut))
    flip = r1 + r2 > 1
    r1[flip], r2[flip] = 1 - r1[flip], 1 - r2[flip]
    pts.append(a + r1[:, None] * (b - a) + r2[:, None] * (c - a))
    nrm.append(np.tile(np.ones(3) / np.sqrt(3.0), (n_cut, 1)))
    return np.vstack(pts), np.vstack(nrm)


def step_strip(nx=100, ny=19, size=(5.0, 1.0), low=0.0, high=1.0):
    """Flat strip and a two-level step field jumping at mid-length."""
    mesh = grid(nx, ny, size)
    field = np.where(mesh.vertices[:, 0] > 0.5 * size[0], high, low)
    return mesh, field


def texture_grid(n=48, levels=(60.0, 190.0), sigma=20.0, seed=0):
    """Unit-spacing flat grid carrying a piecewise-constant field plus noise.

    Returns the mesh, the clean field and the noisy field.
    """
    mesh = grid(n, n, size=(float(n), float(n)))
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    square = (np.abs(x - 0.35 * n) < 0.2 * n) & (np.abs(y - 0.4 * n) < 0.25 * n)
    disk = (x - 0.7 * n) ** 2 + (y - 0.65 * n) ** 2 < (0.18 * n) ** 2
    clean = np.where(square | disk, levels[1], levels[0])
    noisy = clean + rng(seed).normal(0.0, sigma, mesh.n_vertices)
    return mesh, clean, noisy
