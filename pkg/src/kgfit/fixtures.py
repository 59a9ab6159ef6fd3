"""Synthetic clustered knowledge graphs for tests and end-to-end runs."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import io
from .data import Dataset, Triple, Vocab, write_id_file, write_triples
from .rng import stage_rng
from .textembed import TextEmbeddingStore


@dataclass
class ToyKGSpec:
    clusters: int = 8
    per_cluster: int = 8
    dim: int = 32
    noise: float = 0.05
    holdout: float = 0.1
    seed: int = 0
    intra_relation: str = "sibling_of"
    cross_relation: str = "linked_to"

    def __post_init__(self):
        if self.clusters < 2:
            raise ValueError("need at least 2 clusters")
        if self.per_cluster < 2:
            raise ValueError("need at least 2 entities per cluster")
        if not 0.0 < self.holdout < 1.0:
            raise ValueError("holdout must lie in (0, 1)")


def entity_name(cluster: int, member: int) -> str:
    return f"c{cluster}_e{member}"


def generate_toy(spec: ToyKGSpec):
    """Return ``(dataset, text_store, ground_truth_labels)``.

    Entity ``cluster * per_cluster + member`` gets name and description
    embeddings drawn around two per-cluster Gaussian centroids. Within each
    cluster the intra relation forms a directed ring; the cross relation links
    each cluster's member 0 to the next cluster's member 0. Held-out
    valid/test triples are drawn from ring edges only, never leaving an
    entity without a training triple.
    """
    k, m = spec.clusters, spec.per_cluster
    rng = stage_rng(spec.seed, "toy-embeddings")
    name_centroids = rng.normal(size=(k, spec.dim))
    desc_centroids = rng.normal(size=(k, spec.dim))
    labels = np.repeat(np.arange(k), m)
    names = name_centroids[labels] + spec.noise * rng.normal(size=(k * m, spec.dim))
    descs = desc_centroids[labels] + spec.noise * rng.normal(size=(k * m, spec.dim))

    vocab = Vocab([entity_name(c, j) for c in range(k) for j in range(m)],
                  [spec.intra_relation, spec.cross_relation])
    ring = [Triple(c * m + j, 0, c * m + (j + 1) % m) for c in range(k) for j in range(m)]
    cross = [Triple(c * m, 1, ((c + 1) % k) * m) for c in range(k)]
    total = len(ring) + len(cross)
    n_hold = int(round(spec.holdout * total))

    degree = np.zeros(k * m, dtype=np.int64)
    for h, _, t in ring + cross:
        degree[h] += 1
        degree[t] += 1
    order = stage_rng(spec.seed, "toy-split").permutation(len(ring))
    held = []
    for idx in order:
        if len(held) == 2 * n_hold:
            break
        h, _, t = ring[idx]
        if degree[h] > 1 and degree[t] > 1:
            degree[h] -= 1
            degree[t] -= 1
            held.append(int(idx))
    if len(held) < 2 * n_hold:
        raise ValueError("holdout too large to keep every entity in training")
    valid_idx, test_idx = sorted(held[:n_hold]), sorted(held[n_hold:])
    held_set = set(held)
    train = [t for i, t in enumerate(ring) if i not in held_set] + cross
    dataset = Dataset(vocab, train, [ring[i] for i in valid_idx], [ring[i] for i in test_idx])
    return dataset, TextEmbeddingStore(names, descs), labels


def random_kg(num_entities: int = 14, num_relations: int = 3, num_triples: int = 40,
              seed: int = 0, valid_frac: float = 0.15, test_frac: float = 0.15) -> Dataset:
    """Uniformly random triples without duplicates, split three ways."""
    rng = stage_rng(seed, "random-kg")
    universe = num_entities * num_relations * num_entities
    if num_triples > universe:
        raise ValueError("more triples requested than exist")
    codes = rng.choice(universe, size=num_triples, replace=False)
    triples = [Triple(int(c // (num_relations * num_entities)),
                      int(c // num_entities % num_relations),
                      int(c % num_entities)) for c in codes]
    n_valid = int(round(valid_frac * num_triples))
    n_test = int(round(test_frac * num_triples))
    vocab = Vocab([f"e{i}" for i in range(num_entities)], [f"r{i}" for i in range(num_relations)])
    return Dataset(vocab,
                   triples[n_valid + n_test:],
                   triples[:n_valid],
                   triples[n_valid:n_valid + n_test])


def write_toy(spec: ToyKGSpec, out_dir) -> dict:
    """Write a toy fixture in the standard on-disk formats; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset, store, labels = generate_toy(spec)
    vocab = dataset.vocab
    paths = {
        "train": out / "train.tsv",
        "valid": out / "valid.tsv",
        "test": out / "test.tsv",
        "entity2id": out / "entity2id.tsv",
        "relation2id": out / "relation2id.tsv",
        "name_emb": out / "name_emb.kgfe",
        "desc_emb": out / "desc_emb.kgfe",
        "descriptions": out / "descriptions.jsonl",
        "labels": out / "labels.tsv",
        "spec": out / "spec.json",
    }
    for split in ("train", "valid", "test"):
        write_triples(paths[split], dataset.split(split), vocab)
    write_id_file(paths["entity2id"], vocab.entities)
    write_id_file(paths["relation2id"], vocab.relations)
    store.save(paths["name_emb"], paths["desc_emb"])
    io.write_jsonl(paths["descriptions"], (
        {"entity": name, "description": f"{name} is a member of group {labels[i]}"}
        for i, name in enumerate(vocab.entities)))
    with open(paths["labels"], "w", encoding="utf-8") as fh:
        for name, lab in zip(vocab.entities, labels):
            fh.write(f"{name}\t{lab}\n")
    io.dump_json(asdict(spec), paths["spec"])
    return {k: str(v) for k, v in paths.items()}
