"""Brute-force reference implementations used to cross-check the fast paths.

Nothing here imports from the modules it checks: distances, linkage,
silhouette and ranking are recomputed from scratch by enumeration.
"""
from __future__ import annotations

import math


def _cos_dist(a, b) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return 1.0 - dot / (na * nb)


def oracle_linkage(V):
    """O(n^3) average linkage recomputing every cluster-pair mean each step.

    Returns a list of ``(node_a, node_b, distance, new_id)`` with ties broken
    by the smallest ``(node_a, node_b)``.
    """
    rows = [list(map(float, r)) for r in V]
    n = len(rows)
    dist = [[_cos_dist(rows[i], rows[j]) for j in range(n)] for i in range(n)]
    clusters = {i: [i] for i in range(n)}
    merges = []
    for step in range(n - 1):
        best = None
        ids = sorted(clusters)
        for x in range(len(ids)):
            for y in range(x + 1, len(ids)):
                a, b = ids[x], ids[y]
                total = 0.0
                for p in clusters[a]:
                    for q in clusters[b]:
                        total += dist[p][q]
                d = total / (len(clusters[a]) * len(clusters[b]))
                key = (d, a, b)
                if best is None or key < best:
                    best = key
        d, a, b = best
        new_id = n + step
        clusters[new_id] = clusters.pop(a) + clusters.pop(b)
        merges.append((a, b, d, new_id))
    return merges


def oracle_silhouette(V, labels) -> float:
    rows = [list(map(float, r)) for r in V]
    labels = [int(x) for x in labels]
    groups = sorted(set(labels))
    if len(groups) < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    total = 0.0
    for i, r in enumerate(rows):
        own = [j for j in range(len(rows)) if labels[j] == labels[i] and j != i]
        if not own:
            continue
        a = sum(_cos_dist(r, rows[j]) for j in own) / len(own)
        b = math.inf
        for g in groups:
            if g == labels[i]:
                continue
            members = [j for j in range(len(rows)) if labels[j] == g]
            b = min(b, sum(_cos_dist(r, rows[j]) for j in members) / len(members))
        m = max(a, b)
        total += 0.0 if m == 0 else (b - a) / m
    return total / len(rows)


def oracle_rank(candidate_scores: dict, true_entity, known_true=()) -> float:
    """Rank of ``true_entity`` after sorting the filtered candidate list.

    ``candidate_scores`` maps every candidate to its score (higher is better).
    Candidates in ``known_true`` other than the target are dropped. Tied
    candidates share the mean of the positions they occupy.
    """
    kept = [(s, c) for c, s in candidate_scores.items()
            if c == true_entity or c not in set(known_true)]
    kept.sort(key=lambda sc: -sc[0])
    target = candidate_scores[true_entity]
    positions = [pos for pos, (s, _) in enumerate(kept, 1) if s == target]
    return sum(positions) / len(positions)


def oracle_metrics(ranks, hits=(1, 5, 10)) -> dict:
    ranks = list(ranks)
    out = {
        "mr": math.fsum(ranks) / len(ranks),
        "mrr": math.fsum(1.0 / r for r in ranks) / len(ranks),
    }
    for k in hits:
        out[f"hits@{k}"] = sum(1 for r in ranks if r <= k) / len(ranks)
    return out
