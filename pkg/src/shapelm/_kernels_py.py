"""Vectorised numpy implementations of the hot kernels.

These are the reference semantics; ``_kernels.pyx`` must agree with them.
"""

import numpy as np


def shrink_rows(g, t):
    """Isotropic soft-thresholding of every row of ``g`` by ``t``."""
    g = np.asarray(g, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", g, g))
    scale = np.zeros_like(norms)
    big = norms > t
    scale[big] = 1.0 - t / norms[big]
    return g * scale[:, None]


def _segment_hits(p0, p1, a, b, c, eps):
    # Moller-Trumbore restricted to the open segment and the open triangle.
    d = p1 - p0
    e1 = b - a
    e2 = c - a
    h = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, h)
    scale = (np.linalg.norm(d, axis=1) * np.linalg.norm(e1, axis=1)
             * np.linalg.norm(e2, axis=1))
    ok = np.abs(det) > eps * scale
    inv = np.zeros_like(det)
    inv[ok] = 1.0 / det[ok]
    s = p0 - a
    u = inv * np.einsum("ij,ij->i", s, h)
    q = np.cross(s, e1)
    w = inv * np.einsum("ij,ij->i", d, q)
    t = inv * np.einsum("ij,ij->i", e2, q)
    return ok & (u > eps) & (w > eps) & (u + w < 1.0 - eps) & (t > eps) & (t < 1.0 - eps)


def intersecting_pairs(vertices, faces, pairs, eps=1e-10):
    """Boolean mask over ``pairs`` telling which triangle pairs cross.

    A pair crosses when an edge of either triangle pierces the interior of
    the other one. Coplanar overlaps are not detected.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    hit = np.zeros(len(pairs), dtype=bool)
    if len(pairs) == 0:
        return hit
    tri = vertices[faces]
    ta = tri[pairs[:, 0]]
    tb = tri[pairs[:, 1]]
    for first, second in ((ta, tb), (tb, ta)):
        a, b, c = second[:, 0], second[:, 1], second[:, 2]
        for k in range(3):
            p0 = first[:, k]
            p1 = first[:, (k + 1) % 3]
            hit |= _segment_hits(p0, p1, a, b, c, eps)
    return hit
