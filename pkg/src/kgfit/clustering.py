"""Seed hierarchy construction: average-linkage clustering over cosine
distance, silhouette-driven threshold sweep, and top-down cluster replacement.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .tree import HierarchyTree, Node, TreeInvariantError


class ClusteringError(ValueError):
    pass


def cosine_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine distance undefined for a zero vector")
    return float(np.clip(1.0 - np.dot(a, b) / (na * nb), 0.0, 2.0))


def cosine_distance_matrix(V, chunk: int = 2048) -> np.ndarray:
    """Full pairwise cosine distances, built one row block at a time."""
    V = np.asarray(V, dtype=np.float64)
    norms = np.linalg.norm(V, axis=1)
    if np.any(norms == 0):
        raise ValueError("cosine distance undefined for zero rows")
    U = V / norms[:, None]
    n = U.shape[0]
    D = np.empty((n, n))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        np.matmul(U[start:stop], U.T, out=D[start:stop])
    np.subtract(1.0, D, out=D)
    np.clip(D, 0.0, 2.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


@dataclass
class Dendrogram:
    """Merge list; step ``s`` joins ``pairs[s]`` into node ``n_leaves + s``."""

    n_leaves: int
    pairs: np.ndarray
    dists: np.ndarray

    @property
    def merges(self):
        return [
            (int(a), int(b), float(d), self.n_leaves + s)
            for s, ((a, b), d) in enumerate(zip(self.pairs, self.dists))
        ]

    @property
    def root(self) -> int:
        return 2 * self.n_leaves - 2


@dataclass
class ClusterLabels:
    tau: float
    labels: np.ndarray

    @property
    def num_clusters(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def clusters(self) -> list[list[int]]:
        out = [[] for _ in range(self.num_clusters)]
        for e, c in enumerate(self.labels):
            out[c].append(e)
        return out


def agglomerate(V, D: np.ndarray | None = None) -> Dendrogram:
    """Exact average-linkage (UPGMA) clustering under cosine distance."""
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or V.shape[0] < 2:
        raise ClusteringError("agglomerative clustering needs at least 2 rows")
    if D is None:
        D = cosine_distance_matrix(V)
    pairs, dists = _kernels.average_linkage(np.array(D, dtype=np.float64, order="C"))
    return Dendrogram(V.shape[0], np.asarray(pairs), np.asarray(dists))


def _dense(raw: np.ndarray) -> np.ndarray:
    """Relabel so cluster ids appear in order of their smallest entity."""
    _, first, inverse = np.unique(raw, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inverse].astype(np.int64)


def cut(dendrogram: Dendrogram, tau: float) -> ClusterLabels:
    """Maximal subtrees whose merge distances are all strictly below ``tau``."""
    n = dendrogram.n_leaves
    qualifies = np.zeros(2 * n - 1, dtype=bool)
    qualifies[:n] = True
    for s, ((a, b), d) in enumerate(zip(dendrogram.pairs, dendrogram.dists)):
        qualifies[n + s] = d < tau and qualifies[a] and qualifies[b]
    raw = np.empty(n, dtype=np.int64)
    stack = [dendrogram.root] if n > 1 else [0]
    while stack:
        node = stack.pop()
        if qualifies[node]:
            for leaf in _leaves_under(dendrogram, node):
                raw[leaf] = node
        else:
            stack.extend(dendrogram.pairs[node - n])
    return ClusterLabels(float(tau), _dense(raw))


def _leaves_under(dendrogram: Dendrogram, node: int) -> list[int]:
    n = dendrogram.n_leaves
    out, stack = [], [node]
    while stack:
        x = stack.pop()
        if x < n:
            out.append(int(x))
        else:
            stack.extend(dendrogram.pairs[x - n])
    return out


def silhouette(V, labels, D: np.ndarray | None = None) -> float:
    """Mean silhouette under cosine distance; singletons score 0."""
    labels = np.asarray(getattr(labels, "labels", labels), dtype=np.int64)
    k = int(labels.max()) + 1 if labels.size else 0
    if k < 2:
        raise ClusteringError("silhouette needs at least 2 clusters")
    if D is None:
        D = cosine_distance_matrix(V)
    D = np.ascontiguousarray(D, dtype=np.float64)
    return float(np.mean(_kernels.silhouette_samples(D, np.ascontiguousarray(labels), k)))


def tau_grid(tau_min: float, tau_max: float, step: float) -> list[float]:
    if not tau_min < tau_max or step <= 0:
        raise ClusteringError("need tau_min < tau_max and step > 0")
    count = int(np.floor((tau_max - tau_min) / step + 1e-9))
    return [round(tau_min + i * step, 10) for i in range(count + 1)]


def sweep(V, tau_min: float = 0.15, tau_max: float = 0.85, step: float = 0.01,
          dendrogram: Dendrogram | None = None, D: np.ndarray | None = None):
    """Return ``(tau_optim, labels)`` maximizing the silhouette score.

    Thresholds yielding fewer than 2 clusters are skipped; ties keep the
    smallest threshold.
    """
    if D is None:
        D = cosine_distance_matrix(V)
    if dendrogram is None:
        dendrogram = agglomerate(V, D)
    best = None
    for tau in tau_grid(tau_min, tau_max, step):
        labels = cut(dendrogram, tau)
        if labels.num_clusters < 2:
            continue
        score = silhouette(V, labels, D)
        if best is None or score > best[0]:
            best = (score, labels)
    if best is None:
        raise ClusteringError(f"no threshold in [{tau_min}, {tau_max}] yields >= 2 clusters")
    return best[1].tau, best[1]


def build_seed(dendrogram: Dendrogram, labels) -> HierarchyTree:
    """Top-down replacement of entity leaves by their clusters, then pruning.

    The first leaf of each cluster met in a left-to-right traversal becomes a
    leaf holding the whole cluster; later leaves of that cluster are dropped.
    Empty subtrees are removed and single-child chains collapsed.
    """
    labels = np.asarray(getattr(labels, "labels", labels), dtype=np.int64)
    n = dendrogram.n_leaves
    if labels.shape != (n,):
        raise TreeInvariantError(f"labels cover {labels.shape[0]} entities, dendrogram has {n}")
    k = int(labels.max()) + 1
    if labels.min() < 0 or len(np.unique(labels)) != k:
        raise TreeInvariantError("labels must be a dense partition 0..k-1")
    members = [[] for _ in range(k)]
    for e, c in enumerate(labels):
        members[c].append(e)

    kept = set()
    visited = set()
    stack = [dendrogram.root] if n > 1 else [0]
    while stack:
        node = stack.pop()
        if node < n:
            c = labels[node]
            if c not in visited:
                visited.add(c)
                kept.add(int(node))
            continue
        a, b = dendrogram.pairs[node - n]
        stack.append(int(b))
        stack.append(int(a))

    built: dict[int, Node | None] = {}
    for e in range(n):
        built[e] = Node(entities=list(members[labels[e]])) if e in kept else None
    for s, (a, b) in enumerate(dendrogram.pairs):
        kids = [x for x in (built.pop(int(a)), built.pop(int(b))) if x is not None]
        if not kids:
            built[n + s] = None
        elif len(kids) == 1:
            built[n + s] = kids[0]
        else:
            built[n + s] = Node(children=kids)
    root = built[dendrogram.root if n > 1 else 0]
    tree = HierarchyTree(root, "seed")
    tree.validate(n)
    return tree
