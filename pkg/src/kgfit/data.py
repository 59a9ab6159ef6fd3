"""Triple loading, vocabularies and the filtered-setting candidate index."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np


class KGDataError(ValueError):
    pass


class TripleParseError(KGDataError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


class VocabError(KGDataError):
    pass


class Triple(NamedTuple):
    head: int
    rel: int
    tail: int


@dataclass
class Vocab:
    entities: list[str] = field(default_factory=list)
    relations: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.entity_ids = {}
        self.relation_ids = {}
        for name in self.entities:
            self._register(name, self.entity_ids, None)
        for name in self.relations:
            self._register(name, self.relation_ids, None)

    @staticmethod
    def _register(name, index, names):
        if name in index:
            raise VocabError(f"duplicate vocabulary name {name!r}")
        index[name] = len(index)
        if names is not None:
            names.append(name)

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def add_entity(self, name: str) -> int:
        if name not in self.entity_ids:
            self._register(name, self.entity_ids, self.entities)
        return self.entity_ids[name]

    def add_relation(self, name: str) -> int:
        if name not in self.relation_ids:
            self._register(name, self.relation_ids, self.relations)
        return self.relation_ids[name]

    def entity_id(self, name: str) -> int:
        try:
            return self.entity_ids[name]
        except KeyError:
            raise VocabError(f"unknown entity {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self.relation_ids[name]
        except KeyError:
            raise VocabError(f"unknown relation {name!r}") from None

    def copy(self) -> "Vocab":
        return Vocab(list(self.entities), list(self.relations))


def read_id_file(path) -> list[str]:
    """Read a ``name<TAB>id`` sidecar and return names ordered by id."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise TripleParseError(path, lineno, f"expected 2 columns, found {len(cols)}")
            try:
                pairs.append((int(cols[1]), cols[0]))
            except ValueError:
                raise TripleParseError(path, lineno, f"bad id {cols[1]!r}") from None
    pairs.sort()
    if [i for i, _ in pairs] != list(range(len(pairs))):
        raise VocabError(f"{path}: ids must be dense 0..{len(pairs) - 1}")
    return [name for _, name in pairs]


def write_id_file(path, names: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, name in enumerate(names):
            fh.write(f"{name}\t{i}\n")


def load_triples(path, vocab_mode: str = "build", vocab: Vocab | None = None):
    """Parse a ``head<TAB>relation<TAB>tail`` file.

    With ``vocab_mode="build"`` unseen names are appended to ``vocab`` (a new
    one is created when None) in first-appearance order. With ``"reuse"``
    an unknown name raises :class:`VocabError`.
    """
    if vocab_mode not in ("build", "reuse"):
        raise ValueError(f"vocab_mode must be 'build' or 'reuse', got {vocab_mode!r}")
    if vocab is None:
        if vocab_mode == "reuse":
            raise VocabError("vocab_mode='reuse' requires a vocabulary")
        vocab = Vocab()
    triples = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise TripleParseError(path, lineno, f"expected 3 tab-separated columns, found {len(cols)}")
            h, r, t = cols
            if vocab_mode == "build":
                triples.append(Triple(vocab.add_entity(h), vocab.add_relation(r), vocab.add_entity(t)))
            else:
                triples.append(Triple(vocab.entity_id(h), vocab.relation_id(r), vocab.entity_id(t)))
    return vocab, triples


def write_triples(path, triples: Iterable[Triple], vocab: Vocab) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for h, r, t in triples:
            fh.write(f"{vocab.entities[h]}\t{vocab.relations[r]}\t{vocab.entities[t]}\n")


def as_array(triples) -> np.ndarray:
    arr = np.asarray(triples, dtype=np.int64)
    return arr.reshape(-1, 3)


@dataclass
class Dataset:
    vocab: Vocab
    train: list[Triple]
    valid: list[Triple] = field(default_factory=list)
    test: list[Triple] = field(default_factory=list)

    def __post_init__(self):
        ne, nr = self.vocab.num_entities, self.vocab.num_relations
        for split in ("train", "valid", "test"):
            triples = [Triple(*map(int, t)) for t in getattr(self, split)]
            seen = set()
            for t in triples:
                if not (0 <= t.head < ne and 0 <= t.tail < ne and 0 <= t.rel < nr):
                    raise VocabError(f"{split}: triple {tuple(t)} outside vocabulary bounds")
                if t in seen:
                    raise KGDataError(f"{split}: duplicate triple {tuple(t)}")
                seen.add(t)
            setattr(self, split, triples)

    @property
    def all_known(self) -> set[Triple]:
        return set(self.train) | set(self.valid) | set(self.test)

    def split(self, name: str) -> list[Triple]:
        if name not in ("train", "valid", "test"):
            raise KeyError(name)
        return getattr(self, name)


def load_dataset(directory, entity2id=None, relation2id=None) -> Dataset:
    """Load ``train.tsv``/``valid.tsv``/``test.tsv`` from a directory.

    Ids follow first appearance over train, valid, test unless id sidecars are
    given (or ``entity2id.tsv``/``relation2id.tsv`` exist in the directory),
    in which case the sidecars fix the ids and unknown names are an error.
    """
    directory = Path(directory)
    if entity2id is None and (directory / "entity2id.tsv").exists():
        entity2id = directory / "entity2id.tsv"
    if relation2id is None and (directory / "relation2id.tsv").exists():
        relation2id = directory / "relation2id.tsv"

    vocab = Vocab(
        read_id_file(entity2id) if entity2id else [],
        read_id_file(relation2id) if relation2id else [],
    )
    mode = "reuse" if (entity2id and relation2id) else "build"
    splits = {}
    for name in ("train", "valid", "test"):
        path = _split_path(directory, name)
        if path is None:
            if name == "train":
                raise FileNotFoundError(f"no train split in {directory}")
            splits[name] = []
            continue
        _, splits[name] = load_triples(path, mode, vocab)
    return Dataset(vocab, splits["train"], splits["valid"], splits["test"])


def _split_path(directory: Path, name: str):
    for suffix in (".tsv", ".txt"):
        p = directory / f"{name}{suffix}"
        if p.exists():
            return p
    return None


class FilterIndex:
    """Known-true tails per (head, rel) and heads per (rel, tail)."""

    def __init__(self, triples: Iterable[Triple] = ()):
        self.tails = defaultdict(set)
        self.heads = defaultdict(set)
        for h, r, t in triples:
            self.tails[(h, r)].add(t)
            self.heads[(r, t)].add(h)
        self.tails = dict(self.tails)
        self.heads = dict(self.heads)

    def __len__(self):
        return len(self.tails)

    def true_tails(self, head: int, rel: int) -> frozenset:
        return frozenset(self.tails.get((head, rel), ()))

    def true_heads(self, rel: int, tail: int) -> frozenset:
        return frozenset(self.heads.get((rel, tail), ()))

    def known(self, triple: Triple, side: str) -> set:
        """Known-true entities for the corrupted ``side`` of ``triple``."""
        h, r, t = triple
        if side == "tail":
            return self.tails.get((h, r), set())
        if side == "head":
            return self.heads.get((r, t), set())
        raise ValueError(f"side must be 'head' or 'tail', got {side!r}")


def build_filter_index(dataset: Dataset) -> FilterIndex:
    return FilterIndex(dataset.train + dataset.valid + dataset.test)
