# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled single-nearest-neighbor scan over a dense reference matrix.

Queries are processed in blocks; each reference row is scanned against the
whole block while it is hot in cache. Squared Euclidean distances accumulate
dimension by dimension, and a partial sum already at or above the query's
current best abandons that pair (checked every 8 dims). Reference rows are
visited in index order with a strict ``<`` update, so exact ties resolve to
the lowest reference index.
"""

from libc.math cimport INFINITY

import numpy as np

DEF QUERY_BLOCK = 32


def nearest_neighbor(double[:, ::1] ref, double[:, ::1] queries):
    """For each query row return (index, squared distance) of its nearest
    reference row under Euclidean distance.

    Args:
        ref: (n, d) C-contiguous float64 reference matrix, n >= 1.
        queries: (q, d) C-contiguous float64 query matrix.

    Returns:
        (indices int64 (q,), squared_distances float64 (q,)).
    """
    cdef Py_ssize_t n = ref.shape[0]
    cdef Py_ssize_t d = ref.shape[1]
    cdef Py_ssize_t q = queries.shape[0]
    if n < 1:
        raise ValueError("reference set is empty")
    if queries.shape[1] != d:
        raise ValueError(
            f"query dim {queries.shape[1]} does not match reference dim {d}"
        )

    idx_out = np.zeros(q, dtype=np.int64)
    dist_out = np.full(q, np.inf)
    cdef long long[::1] idx = idx_out
    cdef double[::1] dist = dist_out

    cdef Py_ssize_t qs, qe, i, j, k
    cdef double best, acc, diff

    for qs in range(0, q, QUERY_BLOCK):
        qe = min(qs + QUERY_BLOCK, q)
        for j in range(n):
            for i in range(qs, qe):
                best = dist[i]
                acc = 0.0
                for k in range(d):
                    diff = queries[i, k] - ref[j, k]
                    acc += diff * diff
                    if (k & 7) == 7 and acc >= best:
                        break
                else:
                    if acc < best:
                        dist[i] = acc
                        idx[i] = j
    return idx_out, dist_out
