"""Filtered link-prediction evaluation (MR, MRR, Hits@N) with mean tie ranks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import io
from .data import FilterIndex, Triple
from .models import ModelState, score_batch

HITS = (1, 5, 10)
TIE_CONVENTION = "mean"


class EvaluationError(RuntimeError):
    pass


def rank_from_scores(scores: np.ndarray, true_entity: int, filtered=()) -> float:
    """``1 + #better + #tied/2`` over candidates not in ``filtered``.

    The true entity is always kept, even if listed in ``filtered``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    keep = np.ones(scores.shape[0], dtype=bool)
    if len(filtered):
        keep[np.fromiter(filtered, dtype=np.int64)] = False
    keep[true_entity] = True
    target = scores[true_entity]
    kept = scores[keep]
    better = np.count_nonzero(kept > target)
    tied = np.count_nonzero(kept == target) - 1
    return 1.0 + better + tied / 2.0


def candidate_scores(state: ModelState, triple: Triple, side: str, block_size: int = 4096) -> np.ndarray:
    h, r, t = triple
    N = state.num_entities
    out = np.empty(N)
    rel = state.R[r][None, :]
    for start in range(0, N, block_size):
        cand = state.E[start:start + block_size]
        if side == "tail":
            out[start:start + len(cand)] = score_batch(state, state.E[h][None, :], rel, cand)
        elif side == "head":
            out[start:start + len(cand)] = score_batch(state, cand, rel, state.E[t][None, :])
        else:
            raise ValueError(f"side must be 'head' or 'tail', got {side!r}")
    return out


def rank(triple: Triple, side: str, state: ModelState, filter_index: FilterIndex | None,
         block_size: int = 4096) -> float:
    triple = Triple(*triple)
    scores = candidate_scores(state, triple, side, block_size)
    true = triple.tail if side == "tail" else triple.head
    known = filter_index.known(triple, side) if filter_index is not None else set()
    if filter_index is not None and true not in known:
        raise EvaluationError(f"{tuple(triple)} is missing from the filter index")
    return rank_from_scores(scores, true, known - {true})


def metrics_from_ranks(ranks, hits=HITS) -> dict:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise EvaluationError("no ranks to summarize")
    # correctly rounded sums keep metrics independent of summation order
    mr = math.fsum(ranks) / ranks.size
    out = {"mr": mr, "mr_int": int(math.floor(mr + 0.5)), "mrr": math.fsum(1.0 / ranks) / ranks.size}
    for k in hits:
        out[f"hits@{k}"] = int(np.count_nonzero(ranks <= k)) / ranks.size
    return out


@dataclass
class EvalReport:
    head: dict
    tail: dict
    both: dict
    count: int
    tie_convention: str = TIE_CONVENTION
    head_ranks: list = field(default_factory=list, repr=False)
    tail_ranks: list = field(default_factory=list, repr=False)
    triples: list = field(default_factory=list, repr=False)

    @property
    def mrr(self) -> float:
        return self.both["mrr"]

    def hits(self, k: int) -> float:
        return self.both[f"hits@{k}"]

    def to_json(self) -> dict:
        return {"count": self.count, "tie_convention": self.tie_convention,
                "both": self.both, "head": self.head, "tail": self.tail}

    def table(self) -> str:
        keys = list(self.both)
        header = ["side"] + keys
        rows = [header]
        for side in ("head", "tail", "both"):
            vals = getattr(self, side)
            rows.append([side] + [f"{vals[k]:.4f}" if isinstance(vals[k], float) else str(vals[k]) for k in keys])
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows)

    def write_per_triple(self, path, vocab=None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("head\trelation\ttail\thead_rank\ttail_rank\n")
            for (h, r, t), hr, tr in zip(self.triples, self.head_ranks, self.tail_ranks):
                if vocab is not None:
                    h, r, t = vocab.entities[h], vocab.relations[r], vocab.entities[t]
                fh.write(f"{h}\t{r}\t{t}\t{hr}\t{tr}\n")


def evaluate(triples, state: ModelState, filter_index: FilterIndex | None,
             block_size: int = 4096, hits=HITS) -> EvalReport:
    triples = [Triple(*t) for t in triples]
    if not triples:
        raise EvaluationError("cannot evaluate an empty split")
    head_ranks = [rank(t, "head", state, filter_index, block_size) for t in triples]
    tail_ranks = [rank(t, "tail", state, filter_index, block_size) for t in triples]
    return EvalReport(
        head=metrics_from_ranks(head_ranks, hits),
        tail=metrics_from_ranks(tail_ranks, hits),
        both=metrics_from_ranks(head_ranks + tail_ranks, hits),
        count=len(triples),
        head_ranks=head_ranks, tail_ranks=tail_ranks, triples=triples,
    )


def zero_shot_rank(entity_vectors: np.ndarray, triple: Triple, relation_vectors=None,
                   filter_index: FilterIndex | None = None) -> float:
    """Rank the true tail by cosine similarity to ``e_head + r`` (``r = 0`` when absent)."""
    h, r, t = Triple(*triple)
    V = np.asarray(entity_vectors, dtype=np.float64)
    if not (0 <= h < len(V) and 0 <= t < len(V)):
        raise KeyError(f"no vector for entity {h if not 0 <= h < len(V) else t}")
    query = V[h].copy()
    if relation_vectors is not None:
        if not 0 <= r < len(relation_vectors):
            raise KeyError(f"no vector for relation {r}")
        query = query + np.asarray(relation_vectors[r], dtype=np.float64)
    norms = np.linalg.norm(V, axis=1) * np.linalg.norm(query)
    sims = (V @ query) / np.where(norms > 0, norms, 1.0)
    known = filter_index.known(Triple(h, r, t), "tail") if filter_index is not None else set()
    return rank_from_scores(sims, t, set(known) - {t})


def write_report(report: EvalReport, path) -> None:
    io.dump_json(report.to_json(), path)
