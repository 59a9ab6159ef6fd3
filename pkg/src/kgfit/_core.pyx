# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for average-linkage clustering and silhouette scores."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


cdef inline bint _before(double d1, long lo1, long hi1,
                         double d2, long lo2, long hi2) nogil:
    if d1 < d2:
        return True
    if d1 > d2:
        return False
    if lo1 != lo2:
        return lo1 < lo2
    return hi1 < hi2


cdef void _row_best(double[:, ::1] D, long i, char[::1] active, long[::1] ids,
                    long n, long[::1] nn, double[::1] nnd) nogil:
    cdef long j, best = -1, best_id = 0
    cdef double bd = INFINITY, d
    for j in range(n):
        if j == i or not active[j]:
            continue
        d = D[i, j]
        if best < 0 or d < bd or (d == bd and ids[j] < best_id):
            best, bd, best_id = j, d, ids[j]
    nn[i] = best
    nnd[i] = bd


def average_linkage(double[:, ::1] D):
    """UPGMA merge sequence over a square distance matrix (modified in place).

    Returns ``(pairs, dists)``: ``pairs[s] = (node_a, node_b)`` with
    ``node_a < node_b``; the node created at step ``s`` has id ``n + s``.
    Ties are broken by the smallest ``(node_a, node_b)`` pair.
    """
    cdef long n = D.shape[0]
    cdef long step, i, j, k, s, t, lo, hi, blo, bhi, bi
    cdef double bd, d, wi, wj
    pairs_arr = np.empty((max(n - 1, 0), 2), dtype=np.int64)
    dists_arr = np.empty(max(n - 1, 0), dtype=np.float64)
    cdef long long[:, ::1] pairs = pairs_arr
    cdef double[::1] dists = dists_arr
    cdef char[::1] active = np.ones(n, dtype=np.int8)
    cdef long[::1] ids = np.arange(n, dtype=np.int_)
    cdef double[::1] size = np.ones(n, dtype=np.float64)
    cdef long[::1] nn = np.full(n, -1, dtype=np.int_)
    cdef double[::1] nnd = np.full(n, INFINITY, dtype=np.float64)

    with nogil:
        for i in range(n):
            _row_best(D, i, active, ids, n, nn, nnd)
        for step in range(n - 1):
            bi = -1
            bd = INFINITY
            blo = 0
            bhi = 0
            for i in range(n):
                if not active[i] or nn[i] < 0:
                    continue
                lo = ids[i] if ids[i] < ids[nn[i]] else ids[nn[i]]
                hi = ids[i] + ids[nn[i]] - lo
                if bi < 0 or _before(nnd[i], lo, hi, bd, blo, bhi):
                    bi, bd, blo, bhi = i, nnd[i], lo, hi
            i = bi
            j = nn[bi]
            pairs[step, 0] = blo
            pairs[step, 1] = bhi
            dists[step] = bd
            s = i if i < j else j
            t = i + j - s
            wi = size[s]
            wj = size[t]
            for k in range(n):
                if not active[k] or k == s or k == t:
                    continue
                d = (wi * D[s, k] + wj * D[t, k]) / (wi + wj)
                D[s, k] = d
                D[k, s] = d
            size[s] = wi + wj
            active[t] = 0
            ids[s] = n + step
            for k in range(n):
                if not active[k] or k == s:
                    continue
                if nn[k] == s or nn[k] == t:
                    _row_best(D, k, active, ids, n, nn, nnd)
                else:
                    lo = ids[k] if ids[k] < ids[s] else ids[s]
                    hi = ids[k] + ids[s] - lo
                    if _before(D[k, s], lo, hi, nnd[k],
                               ids[k] if ids[k] < ids[nn[k]] else ids[nn[k]],
                               ids[k] if ids[k] > ids[nn[k]] else ids[nn[k]]):
                        nn[k] = s
                        nnd[k] = D[k, s]
            _row_best(D, s, active, ids, n, nn, nnd)
    return pairs_arr, dists_arr


def silhouette_samples(const double[:, ::1] D, const long long[::1] labels, long k):
    """Per-point silhouette values; singleton clusters contribute 0."""
    cdef long n = D.shape[0]
    cdef long i, j, c, li
    cdef double a, b, m
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] sums = np.zeros(k, dtype=np.float64)
    cdef long[::1] counts = np.zeros(k, dtype=np.int_)
    for i in range(n):
        counts[labels[i]] += 1
    with nogil:
        for i in range(n):
            li = labels[i]
            if counts[li] <= 1:
                out[i] = 0.0
                continue
            for c in range(k):
                sums[c] = 0.0
            for j in range(n):
                sums[labels[j]] += D[i, j]
            a = (sums[li] - D[i, i]) / (counts[li] - 1)
            b = INFINITY
            for c in range(k):
                if c == li or counts[c] == 0:
                    continue
                m = sums[c] / counts[c]
                if m < b:
                    b = m
            m = a if a > b else b
            out[i] = 0.0 if m == 0.0 else (b - a) / m
    return out_arr
