"""Numpy implementations of the hot loops, used when the extension is not built."""

import numpy as np

_CHUNK = 256


def nearest_sqdist(queries, points):
    q = np.ascontiguousarray(queries, dtype=np.float64)
    p = np.ascontiguousarray(points, dtype=np.float64)
    if q.shape[0] == 0:
        return np.empty(0, dtype=np.float64)
    if p.shape[0] == 0:
        raise ValueError("nearest_sqdist: empty reference cloud")
    out = np.empty(q.shape[0], dtype=np.float64)
    for start in range(0, q.shape[0], _CHUNK):
        block = q[start:start + _CHUNK]
        dx = block[:, None, 0] - p[None, :, 0]
        dy = block[:, None, 1] - p[None, :, 1]
        dz = block[:, None, 2] - p[None, :, 2]
        out[start:start + _CHUNK] = ((dx * dx + dy * dy) + dz * dz).min(axis=1)
    return out


def greedy_scan(order, accept, rows, cols, n_rows, n_cols):
    order = np.asarray(order, dtype=np.int64)
    accept = np.asarray(accept, dtype=bool)
    rows = np.asarray(rows, dtype=np.int64).tolist()
    cols = np.asarray(cols, dtype=np.int64).tolist()
    out = np.zeros(order.shape, dtype=np.uint8)
    for s, perm in enumerate(order.tolist()):
        acc = accept[s]
        row_used = set()
        col_used = set()
        for pair in perm:
            i, j = rows[pair], cols[pair]
            if i in row_used or j in col_used:
                continue
            if acc[pair]:
                out[s, pair] = 1
                row_used.add(i)
                col_used.add(j)
    return out
