"""Numba kernels for mixture masses over many boxes.

Masses are assembled from per-axis CDF tables evaluated on the distinct box
edges, so the inner loop is a product of table differences. Each box is
reduced sequentially over components, which keeps results bitwise identical
for any thread count.
"""

import numpy as np
from numba import njit, prange

_FAST = {"contract", "reassoc"}


@njit(parallel=True, cache=True, fastmath=_FAST)
def accumulate_1d(idx_lo, idx_hi, tables, w, out):
    M = idx_lo.shape[0]
    K = w.shape[0]
    for m in prange(M):
        ah = tables[0, idx_hi[m, 0]]
        al = tables[0, idx_lo[m, 0]]
        acc = 0.0
        for k in range(K):
            acc += w[k] * (ah[k] - al[k])
        out[m] += acc


@njit(parallel=True, cache=True, fastmath=_FAST)
def accumulate_2d(idx_lo, idx_hi, tables, w, out):
    M = idx_lo.shape[0]
    K = w.shape[0]
    for m in prange(M):
        ah = tables[0, idx_hi[m, 0]]
        al = tables[0, idx_lo[m, 0]]
        bh = tables[1, idx_hi[m, 1]]
        bl = tables[1, idx_lo[m, 1]]
        acc = 0.0
        for k in range(K):
            acc += w[k] * (ah[k] - al[k]) * (bh[k] - bl[k])
        out[m] += acc


@njit(parallel=True, cache=True, fastmath=_FAST)
def accumulate_3d(idx_lo, idx_hi, tables, w, out):
    M = idx_lo.shape[0]
    K = w.shape[0]
    for m in prange(M):
        ah = tables[0, idx_hi[m, 0]]
        al = tables[0, idx_lo[m, 0]]
        bh = tables[1, idx_hi[m, 1]]
        bl = tables[1, idx_lo[m, 1]]
        ch = tables[2, idx_hi[m, 2]]
        cl = tables[2, idx_lo[m, 2]]
        acc = 0.0
        for k in range(K):
            acc += w[k] * (ah[k] - al[k]) * (bh[k] - bl[k]) * (ch[k] - cl[k])
        out[m] += acc


@njit(parallel=True, cache=True)
def accumulate_nd(idx_lo, idx_hi, tables, w, out):
    M, d = idx_lo.shape
    K = w.shape[0]
    for m in prange(M):
        acc = 0.0
        for k in range(K):
            p = w[k]
            for i in range(d):
                p *= tables[i, idx_hi[m, i], k] - tables[i, idx_lo[m, i], k]
            acc += p
        out[m] += acc


def accumulate(idx_lo, idx_hi, tables, w, out):
    d = idx_lo.shape[1]
    if d == 1:
        accumulate_1d(idx_lo, idx_hi, tables, w, out)
    elif d == 2:
        accumulate_2d(idx_lo, idx_hi, tables, w, out)
    elif d == 3:
        accumulate_3d(idx_lo, idx_hi, tables, w, out)
    else:
        accumulate_nd(idx_lo, idx_hi, tables, w, out)


def box_masses(axis_cdf, centers, weights, lo, hi, chunk_bytes=64 * 2**20):
    """Mass of the mixture ``sum_k w_k K(. - c_k)`` inside each box ``[lo_m, hi_m]``.

    ``axis_cdf(axis, x, c)`` must return the one-dimensional kernel CDF on
    ``axis`` at points ``x`` for centers ``c`` (broadcasting).
    """
    M, d = lo.shape
    out = np.zeros(M)
    if M == 0:
        return out
    keep = weights > 0.0
    centers = np.ascontiguousarray(centers[keep])
    weights = np.ascontiguousarray(weights[keep])
    K = weights.size
    if K == 0:
        return out
    idx_lo = np.empty((M, d), dtype=np.int64)
    idx_hi = np.empty((M, d), dtype=np.int64)
    edges = []
    for i in range(d):
        e, inv = np.unique(np.concatenate([lo[:, i], hi[:, i]]), return_inverse=True)
        idx_lo[:, i] = inv[:M]
        idx_hi[:, i] = inv[M:]
        edges.append(e)
    n_edges = max(e.size for e in edges)
    step = max(1, min(K, chunk_bytes // (8 * d * n_edges)))
    for start in range(0, K, step):
        stop = min(K, start + step)
        tables = np.zeros((d, n_edges, stop - start))
        for i in range(d):
            tables[i, : edges[i].size] = axis_cdf(i, edges[i][:, None], centers[None, start:stop, i])
        accumulate(idx_lo, idx_hi, tables, weights[start:stop], out)
    return out
