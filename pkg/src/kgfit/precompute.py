"""Per-entity lookups for the hierarchical constraint, computed once from a
hierarchy and the initial entity embeddings."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .textembed import ConfigError
from .tree import HierarchyTree, TreeInvariantError, iter_postorder


def _safe_cos_dist(x, Y):
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(Y, axis=-1)
    denom = np.maximum(nx * ny, 1e-300)
    return 1.0 - (Y @ x) / denom


def beta_weights(h: int, beta0: float = 1.2, phi: float = 0.4) -> np.ndarray:
    """``[beta0 * exp(-phi * j) for j in 1..h-1]``."""
    if beta0 <= 0:
        raise ConfigError(f"beta0 must be positive, got {beta0}")
    if phi < 0:
        raise ConfigError(f"phi must be non-negative, got {phi}")
    if h < 1:
        raise ValueError(f"depth must be >= 1, got {h}")
    j = np.arange(1, h, dtype=np.float64)
    return beta0 * np.exp(-phi * j)


def cluster_embeddings(tree: HierarchyTree, E_init: np.ndarray) -> dict[int, np.ndarray]:
    """Mean initial embedding of each leaf, keyed by cluster id (leaf pre-order index)."""
    out = {}
    for cid, leaf in enumerate(tree.leaves()):
        if not leaf.entities:
            raise TreeInvariantError(f"leaf {leaf.id} is empty")
        out[cid] = np.asarray(E_init)[leaf.entities].mean(axis=0)
    return out


def parent_embeddings(tree: HierarchyTree, cluster_embs: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    """Per node id: uniform mean over the cluster embeddings in its subtree."""
    tree.renumber()
    leaf_cid = {leaf.id: cid for cid, leaf in enumerate(tree.leaves())}
    sums, counts = {}, {}
    for node in iter_postorder(tree.root):
        if node.is_leaf:
            sums[node.id] = np.array(cluster_embs[leaf_cid[node.id]], dtype=np.float64)
            counts[node.id] = 1
        else:
            sums[node.id] = sum(sums[c.id] for c in node.children)
            counts[node.id] = sum(counts[c.id] for c in node.children)
    return {nid: sums[nid] / counts[nid] for nid in sums}


def neighbor_clusters(tree: HierarchyTree, cluster_id: int, m: int = 5,
                      ancestor_levels: int = 2, cluster_embs=None) -> list[int]:
    """Other clusters under the ancestor ``ancestor_levels`` above the leaf
    (clipped at the root), nearest first by cosine distance, at most ``m``."""
    tree.renumber()
    leaves = tree.leaves()
    leaf = leaves[cluster_id]
    parents = tree.parents()
    anc = leaf
    for _ in range(ancestor_levels):
        if anc.id not in parents:
            break
        anc = parents[anc.id]
    leaf_cid = {l.id: cid for cid, l in enumerate(leaves)}
    cands = [leaf_cid[l.id] for l in anc.leaves() if l.id != leaf.id]
    if not cands or m <= 0:
        return []
    if cluster_embs is None:
        return sorted(cands)[:m]
    C = np.stack([cluster_embs[c] for c in cands])
    d = _safe_cos_dist(cluster_embs[cluster_id], C)
    order = np.lexsort((np.asarray(cands), d))
    return [cands[i] for i in order[:m]]


@dataclass
class HierPrecomp:
    """Frozen lookups; padded integer tables use -1 for "absent".

    ``parent_paths[c]`` lists node rows from the leaf's parent up to the root;
    depth ``h`` of cluster ``c`` is ``path_len[c] + 1``.
    """

    entity_cluster: np.ndarray      # (num_entities,)
    cluster_emb: np.ndarray         # (K, n)
    node_emb: np.ndarray            # (N, n) indexed by tree node id
    cluster_node: np.ndarray        # (K,) leaf node id of each cluster
    neighbors: np.ndarray           # (K, m)
    neighbor_count: np.ndarray      # (K,)
    parent_paths: np.ndarray        # (K, Hmax)
    path_len: np.ndarray            # (K,)
    betas: np.ndarray               # (Hmax,) beta_1..beta_Hmax
    node_clusters: list[list[int]]  # clusters under each node, for refreshes
    beta0: float = 1.2
    phi: float = 0.4
    m: int = 5
    ancestor_levels: int = 2

    @property
    def num_clusters(self) -> int:
        return self.cluster_emb.shape[0]

    def depth(self, entity: int) -> int:
        return int(self.path_len[self.entity_cluster[entity]]) + 1

    def refreshed(self, E: np.ndarray) -> "HierPrecomp":
        """Same lookups with cluster/node embeddings recomputed from ``E``."""
        sums = np.zeros_like(self.cluster_emb)
        np.add.at(sums, self.entity_cluster, E)
        counts = np.bincount(self.entity_cluster, minlength=self.num_clusters)
        cluster_emb = sums / counts[:, None]
        node_emb = np.stack([cluster_emb[cs].mean(axis=0) for cs in self.node_clusters])
        return HierPrecomp(self.entity_cluster, cluster_emb, node_emb, self.cluster_node,
                           self.neighbors, self.neighbor_count, self.parent_paths, self.path_len,
                           self.betas, self.node_clusters, self.beta0, self.phi, self.m,
                           self.ancestor_levels)

    def save(self, prefix) -> None:
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        io.write_matrix(f"{prefix}.clusters.kgfe", self.cluster_emb)
        io.write_matrix(f"{prefix}.nodes.kgfe", self.node_emb)
        io.dump_json({
            "beta0": self.beta0, "phi": self.phi, "m": self.m,
            "ancestor_levels": self.ancestor_levels,
            "entity_cluster": self.entity_cluster.tolist(),
            "cluster_node": self.cluster_node.tolist(),
            "neighbors": [row[:k].tolist() for row, k in zip(self.neighbors, self.neighbor_count)],
            "parent_paths": [row[:k].tolist() for row, k in zip(self.parent_paths, self.path_len)],
            "node_clusters": self.node_clusters,
        }, f"{prefix}.index.json")

    @classmethod
    def load(cls, prefix) -> "HierPrecomp":
        idx = io.load_json(f"{prefix}.index.json")
        nb, nb_count = _pad(idx["neighbors"], idx["m"])
        paths, plen = _pad(idx["parent_paths"])
        return cls(
            np.asarray(idx["entity_cluster"], dtype=np.int64),
            io.read_matrix(f"{prefix}.clusters.kgfe"),
            io.read_matrix(f"{prefix}.nodes.kgfe"),
            np.asarray(idx["cluster_node"], dtype=np.int64),
            nb, nb_count, paths, plen,
            beta_weights(paths.shape[1] + 1, idx["beta0"], idx["phi"]),
            idx["node_clusters"], idx["beta0"], idx["phi"], idx["m"], idx["ancestor_levels"],
        )


def _pad(rows, width=None):
    width = max([len(r) for r in rows] + [width or 0, 1])
    out = np.full((len(rows), width), -1, dtype=np.int64)
    lens = np.zeros(len(rows), dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
        lens[i] = len(r)
    return out, lens


def precompute(tree: HierarchyTree, E_init: np.ndarray, m: int = 5, ancestor_levels: int = 2,
               beta0: float = 1.2, phi: float = 0.4) -> HierPrecomp:
    E_init = np.asarray(E_init, dtype=np.float64)
    tree.renumber()
    tree.validate(E_init.shape[0])
    leaves = tree.leaves()
    cembs = cluster_embeddings(tree, E_init)
    pembs = parent_embeddings(tree, cembs)
    parents = tree.parents()

    entity_cluster = np.empty(E_init.shape[0], dtype=np.int64)
    for cid, leaf in enumerate(leaves):
        entity_cluster[leaf.entities] = cid

    paths = []
    for leaf in leaves:
        path, node = [], leaf
        while node.id in parents:
            node = parents[node.id]
            path.append(node.id)
        paths.append(path)
    neighbors = [neighbor_clusters(tree, cid, m, ancestor_levels, cembs) for cid in range(len(leaves))]

    leaf_cid = {leaf.id: cid for cid, leaf in enumerate(leaves)}
    node_clusters = [None] * tree.num_nodes
    for node in iter_postorder(tree.root):
        node_clusters[node.id] = ([leaf_cid[node.id]] if node.is_leaf
                                  else [c for ch in node.children for c in node_clusters[ch.id]])

    nb, nb_count = _pad(neighbors, m)
    pp, plen = _pad(paths)
    return HierPrecomp(
        entity_cluster=entity_cluster,
        cluster_emb=np.stack([cembs[c] for c in range(len(leaves))]),
        node_emb=np.stack([pembs[i] for i in range(tree.num_nodes)]),
        cluster_node=np.array([leaf.id for leaf in leaves], dtype=np.int64),
        neighbors=nb, neighbor_count=nb_count,
        parent_paths=pp, path_len=plen,
        betas=beta_weights(pp.shape[1] + 1, beta0, phi),
        node_clusters=node_clusters,
        beta0=beta0, phi=phi, m=m, ancestor_levels=ancestor_levels,
    )
