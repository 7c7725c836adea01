# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()


def shrink_rows(g, double t):
    cdef const double[:, ::1] src = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t m = src.shape[0], i
    out = np.zeros((m, 3), dtype=np.float64)
    cdef double[:, ::1] dst = out
    cdef double nrm, s
    for i in range(m):
        nrm = sqrt(src[i, 0] * src[i, 0] + src[i, 1] * src[i, 1] + src[i, 2] * src[i, 2])
        if nrm > t:
            s = 1.0 - t / nrm
            dst[i, 0] = src[i, 0] * s
            dst[i, 1] = src[i, 1] * s
            dst[i, 2] = src[i, 2] * s
    return out


cdef inline void _sub(const double* a, const double* b, double* out) noexcept nogil:
    out[0] = a[0] - b[0]
    out[1] = a[1] - b[1]
    out[2] = a[2] - b[2]


cdef inline void _cross(const double* a, const double* b, double* out) noexcept nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef inline double _dot(const double* a, const double* b) noexcept nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


cdef bint _segment_hits(const double* p0, const double* p1, const double* a, const double* b,
                        const double* c, double eps) noexcept nogil:
    cdef double d[3]
    cdef double e1[3]
    cdef double e2[3]
    cdef double h[3]
    cdef double s[3]
    cdef double q[3]
    cdef double det, scale, inv, u, w, t
    _sub(p1, p0, d)
    _sub(b, a, e1)
    _sub(c, a, e2)
    _cross(d, e2, h)
    det = _dot(e1, h)
    scale = sqrt(_dot(d, d)) * sqrt(_dot(e1, e1)) * sqrt(_dot(e2, e2))
    if not fabs(det) > eps * scale:
        return False
    inv = 1.0 / det
    _sub(p0, a, s)
    u = inv * _dot(s, h)
    _cross(s, e1, q)
    w = inv * _dot(d, q)
    t = inv * _dot(e2, q)
    return u > eps and w > eps and u + w < 1.0 - eps and t > eps and t < 1.0 - eps


cdef bint _pair_hits(const double[:, ::1] V, const long long* fa, const long long* fb, double eps) noexcept nogil:
    cdef int side, k
    cdef const long long* first
    cdef const long long* second
    for side in range(2):
        if side == 0:
            first = fa
            second = fb
        else:
            first = fb
            second = fa
        for k in range(3):
            if _segment_hits(&V[first[k], 0], &V[first[(k + 1) % 3], 0],
                             &V[second[0], 0], &V[second[1], 0], &V[second[2], 0], eps):
                return True
    return False


def intersecting_pairs(vertices, faces, pairs, double eps=1e-10):
    cdef const double[:, ::1] V = np.ascontiguousarray(vertices, dtype=np.float64)
    cdef const long long[:, ::1] F = np.ascontiguousarray(faces, dtype=np.int64)
    cdef long long[:, ::1] P = np.ascontiguousarray(
        np.asarray(pairs, dtype=np.int64).reshape(-1, 2))
    cdef Py_ssize_t npairs = P.shape[0], i
    hit = np.zeros(npairs, dtype=bool)
    cdef cnp.uint8_t[::1] H = hit.view(np.uint8)
    with nogil:
        for i in range(npairs):
            H[i] = _pair_hits(V, &F[P[i, 0], 0], &F[P[i, 1], 0], eps)
    return hit
