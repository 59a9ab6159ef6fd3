"""Pure numpy versions of the compiled kernels in ``_core.pyx``.

Same contracts and tie-breaking; used when the extension is not built.
"""
from __future__ import annotations

import numpy as np


def _row_best(D, i, active, ids):
    cand = active.copy()
    cand[i] = False
    idx = np.flatnonzero(cand)
    if idx.size == 0:
        return -1, np.inf
    row = D[i, idx]
    d = row.min()
    tied = idx[row == d]
    j = tied[np.argmin(ids[tied])]
    return int(j), float(d)


def average_linkage(D: np.ndarray):
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[0]
    pairs = np.empty((max(n - 1, 0), 2), dtype=np.int64)
    dists = np.empty(max(n - 1, 0), dtype=np.float64)
    active = np.ones(n, dtype=bool)
    ids = np.arange(n, dtype=np.int64)
    size = np.ones(n, dtype=np.float64)
    nn = np.full(n, -1, dtype=np.int64)
    nnd = np.full(n, np.inf)
    for i in range(n):
        nn[i], nnd[i] = _row_best(D, i, active, ids)

    for step in range(n - 1):
        rows = np.flatnonzero(active & (nn >= 0))
        lo = np.minimum(ids[rows], ids[nn[rows]])
        hi = np.maximum(ids[rows], ids[nn[rows]])
        order = np.lexsort((hi, lo, nnd[rows]))
        i = int(rows[order[0]])
        j = int(nn[i])
        pairs[step] = lo[order[0]], hi[order[0]]
        dists[step] = nnd[i]

        s, t = min(i, j), max(i, j)
        others = active.copy()
        others[[s, t]] = False
        ws, wt = size[s], size[t]
        merged = (ws * D[s, others] + wt * D[t, others]) / (ws + wt)
        D[s, others] = merged
        D[others, s] = merged
        size[s] = ws + wt
        active[t] = False
        ids[s] = n + step

        for k in np.flatnonzero(others):
            if nn[k] == s or nn[k] == t:
                nn[k], nnd[k] = _row_best(D, k, active, ids)
                continue
            cur = (nnd[k], min(ids[k], ids[nn[k]]), max(ids[k], ids[nn[k]]))
            new = (D[k, s], min(ids[k], ids[s]), max(ids[k], ids[s]))
            if new < cur:
                nn[k], nnd[k] = s, D[k, s]
        nn[s], nnd[s] = _row_best(D, s, active, ids)
    return pairs, dists


def silhouette_samples(D: np.ndarray, labels: np.ndarray, k: int, chunk: int = 1024):
    D = np.asarray(D, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = D.shape[0]
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    out = np.zeros(n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        sums = D[start:stop] @ onehot
        lab = labels[start:stop]
        rows = np.arange(stop - start)
        own = counts[lab]
        a = (sums[rows, lab] - D[np.arange(start, stop), np.arange(start, stop)]) / np.maximum(own - 1, 1)
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.inf)
        means[rows, lab] = np.inf
        b = means.min(axis=1)
        m = np.maximum(a, b)
        s = np.where(m > 0, (b - a) / np.where(m > 0, m, 1.0), 0.0)
        s[own <= 1] = 0.0
        out[start:stop] = s
    return out
