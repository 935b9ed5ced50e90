"""Pure-NumPy fallback for the nearest-neighbor kernel.

Blocked evaluation of ||q - r||^2 = ||q||^2 - 2 q.r + ||r||^2 so the working
set stays bounded; BLAS does the heavy lifting. ``np.argmin`` takes the first
occurrence, matching the compiled kernel's lowest-index tie-breaking.
"""

from __future__ import annotations

import numpy as np

QUERY_BLOCK = 512
REF_BLOCK = 8192


def nearest_neighbor(
    ref: np.ndarray, queries: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """For each query row return (index, squared distance) of its nearest
    reference row under Euclidean distance. Same contract as the compiled
    kernel; distances may differ from it in the last few ulps.
    """
    ref = np.ascontiguousarray(ref, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    n, d = ref.shape
    q = queries.shape[0]
    if n < 1:
        raise ValueError("reference set is empty")
    if queries.shape[1] != d:
        raise ValueError(
            f"query dim {queries.shape[1]} does not match reference dim {d}"
        )

    ref_sq = np.einsum("ij,ij->i", ref, ref)
    best_idx = np.zeros(q, dtype=np.int64)
    best_dist = np.full(q, np.inf)

    for qs in range(0, q, QUERY_BLOCK):
        qe = min(qs + QUERY_BLOCK, q)
        block = queries[qs:qe]
        block_sq = np.einsum("ij,ij->i", block, block)
        for rs in range(0, n, REF_BLOCK):
            re_ = min(rs + REF_BLOCK, n)
            d2 = block_sq[:, None] - 2.0 * (block @ ref[rs:re_].T)
            d2 += ref_sq[rs:re_][None, :]
            local = np.argmin(d2, axis=1)
            local_dist = d2[np.arange(qe - qs), local]
            better = local_dist < best_dist[qs:qe]
            best_dist[qs:qe][better] = local_dist[better]
            best_idx[qs:qe][better] = local[better] + rs
    np.maximum(best_dist, 0.0, out=best_dist)
    return best_idx, best_dist
