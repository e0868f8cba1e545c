# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: k-d tree nearest-neighbour squared distances and greedy matching scans.

Both functions mirror ``_pykernels`` exactly; the squared distance is always
accumulated as ``(dx*dx + dy*dy) + dz*dz`` so the two backends agree bit for bit.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


DEF LEAF_SIZE = 8
DEF MAX_STACK = 256


cdef void _select(double[:, ::1] p, cnp.int64_t[::1] perm, Py_ssize_t lo, Py_ssize_t hi,
                  Py_ssize_t k, int dim) noexcept nogil:
    """Quickselect: reorder perm[lo:hi] so perm[k] holds the k-th smallest coordinate."""
    cdef Py_ssize_t i, j, tmp
    cdef double pivot
    hi -= 1
    while lo < hi:
        pivot = p[perm[(lo + hi) >> 1], dim]
        i = lo
        j = hi
        while i <= j:
            while p[perm[i], dim] < pivot:
                i += 1
            while p[perm[j], dim] > pivot:
                j -= 1
            if i <= j:
                tmp = perm[i]
                perm[i] = perm[j]
                perm[j] = tmp
                i += 1
                j -= 1
        if k <= j:
            hi = j
        elif k >= i:
            lo = i
        else:
            return


cdef inline double _box_gap(double[:, ::1] bmin, double[:, ::1] bmax, Py_ssize_t node,
                            double qx, double qy, double qz) noexcept nogil:
    cdef double g, s = 0.0
    g = bmin[node, 0] - qx
    if g < 0:
        g = qx - bmax[node, 0]
    if g > 0:
        s += g * g
    g = bmin[node, 1] - qy
    if g < 0:
        g = qy - bmax[node, 1]
    if g > 0:
        s += g * g
    g = bmin[node, 2] - qz
    if g < 0:
        g = qz - bmax[node, 2]
    if g > 0:
        s += g * g
    return s


def nearest_sqdist(queries, points):
    """Squared distance from every query point to its nearest neighbour in ``points``.

    Builds a k-d tree (median splits on the widest axis, leaves of at most 8
    points, a bounding box per node) and answers each query by best-first
    descent with box-distance pruning.
    """
    cdef double[:, ::1] q = np.ascontiguousarray(queries, dtype=np.float64)
    cdef double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    if q.shape[0] == 0:
        return np.empty(0, dtype=np.float64)
    if p.shape[0] == 0:
        raise ValueError("nearest_sqdist: empty reference cloud")
    cdef Py_ssize_t n = q.shape[0]
    cdef Py_ssize_t m = p.shape[0]
    cdef Py_ssize_t max_nodes = 2 * (m // LEAF_SIZE + 1) * 2 + 1

    perm_arr = np.arange(m, dtype=np.int64)
    cdef cnp.int64_t[::1] perm = perm_arr
    cdef cnp.int64_t[::1] start = np.empty(max_nodes, dtype=np.int64)
    cdef cnp.int64_t[::1] stop = np.empty(max_nodes, dtype=np.int64)
    cdef cnp.int64_t[::1] left = np.empty(max_nodes, dtype=np.int64)
    cdef double[:, ::1] bmin = np.empty((max_nodes, 3), dtype=np.float64)
    cdef double[:, ::1] bmax = np.empty((max_nodes, 3), dtype=np.float64)
    cdef cnp.int64_t[::1] todo = np.empty(max_nodes, dtype=np.int64)
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] res = out

    cdef Py_ssize_t n_nodes = 1, n_todo = 1, node, a, b, k, mid, i, d
    cdef int dim
    cdef double ext, best_ext, v
    cdef Py_ssize_t stack_node[MAX_STACK]
    cdef double stack_gap[MAX_STACK]
    cdef Py_ssize_t top, near, far
    cdef double qx, qy, qz, dx, dy, dz, dist, best, gap, g_near, g_far

    with nogil:
        start[0] = 0
        stop[0] = m
        todo[0] = 0
        while n_todo > 0:
            n_todo -= 1
            node = todo[n_todo]
            a = start[node]
            b = stop[node]
            for d in range(3):
                bmin[node, d] = p[perm[a], d]
                bmax[node, d] = p[perm[a], d]
            for k in range(a + 1, b):
                for d in range(3):
                    v = p[perm[k], d]
                    if v < bmin[node, d]:
                        bmin[node, d] = v
                    elif v > bmax[node, d]:
                        bmax[node, d] = v
            left[node] = -1
            if b - a <= LEAF_SIZE:
                continue
            dim = 0
            best_ext = -1.0
            for d in range(3):
                ext = bmax[node, d] - bmin[node, d]
                if ext > best_ext:
                    best_ext = ext
                    dim = d
            mid = (a + b) >> 1
            _select(p, perm, a, b, mid, dim)
            left[node] = n_nodes
            start[n_nodes] = a
            stop[n_nodes] = mid
            start[n_nodes + 1] = mid
            stop[n_nodes + 1] = b
            todo[n_todo] = n_nodes
            todo[n_todo + 1] = n_nodes + 1
            n_todo += 2
            n_nodes += 2

        for i in range(n):
            qx = q[i, 0]
            qy = q[i, 1]
            qz = q[i, 2]
            best = INFINITY
            stack_node[0] = 0
            stack_gap[0] = _box_gap(bmin, bmax, 0, qx, qy, qz)
            top = 1
            while top > 0:
                top -= 1
                node = stack_node[top]
                if stack_gap[top] >= best:
                    continue
                if left[node] < 0:
                    for k in range(start[node], stop[node]):
                        dx = qx - p[perm[k], 0]
                        dy = qy - p[perm[k], 1]
                        dz = qz - p[perm[k], 2]
                        dist = (dx * dx + dy * dy) + dz * dz
                        if dist < best:
                            best = dist
                    continue
                near = left[node]
                far = near + 1
                g_near = _box_gap(bmin, bmax, near, qx, qy, qz)
                g_far = _box_gap(bmin, bmax, far, qx, qy, qz)
                if g_far < g_near:
                    near, far = far, near
                    g_near, g_far = g_far, g_near
                if g_far < best:
                    stack_node[top] = far
                    stack_gap[top] = g_far
                    top += 1
                if g_near < best:
                    stack_node[top] = near
                    stack_gap[top] = g_near
                    top += 1
            res[i] = best
    return out


def greedy_scan(order, accept, rows, cols, Py_ssize_t n_rows, Py_ssize_t n_cols):
    """Build one matching per row of ``order``.

    ``order[s]`` is a permutation of candidate pair indices for sample ``s``.
    A pair whose row or column is taken is skipped; otherwise it is kept when
    ``accept[s, pair]`` is set and discarded for that sample when not.
    Returns a ``(samples, pairs)`` uint8 mask of chosen pairs.
    """
    cdef cnp.int64_t[:, ::1] o = np.ascontiguousarray(order, dtype=np.int64)
    cdef cnp.uint8_t[:, ::1] acc = np.ascontiguousarray(accept, dtype=np.uint8)
    cdef cnp.int64_t[::1] r = np.ascontiguousarray(rows, dtype=np.int64)
    cdef cnp.int64_t[::1] c = np.ascontiguousarray(cols, dtype=np.int64)
    cdef Py_ssize_t n_samples = o.shape[0]
    cdef Py_ssize_t n_pairs = o.shape[1]
    out = np.zeros((n_samples, n_pairs), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] chosen = out
    row_used_arr = np.zeros(max(n_rows, 1), dtype=np.uint8)
    col_used_arr = np.zeros(max(n_cols, 1), dtype=np.uint8)
    cdef cnp.uint8_t[::1] row_used = row_used_arr
    cdef cnp.uint8_t[::1] col_used = col_used_arr
    cdef Py_ssize_t s, t, pair
    with nogil:
        for s in range(n_samples):
            row_used[:] = 0
            col_used[:] = 0
            for t in range(n_pairs):
                pair = o[s, t]
                if row_used[r[pair]] or col_used[c[pair]]:
                    continue
                if acc[s, pair]:
                    chosen[s, pair] = 1
                    row_used[r[pair]] = 1
                    col_used[c[pair]] = 1
    return out
