"""Text-embedding ingestion, enriched representations and entity initialization."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import io
from .rng import stage_rng


class DimensionError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class TextEmbeddingStore:
    """Per-entity name (``names``) and description (``descs``) embeddings."""

    names: np.ndarray
    descs: np.ndarray
    descriptions: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        self.names = np.asarray(self.names, dtype=np.float64)
        self.descs = np.asarray(self.descs, dtype=np.float64)
        if self.names.ndim != 2 or self.descs.ndim != 2:
            raise DimensionError("embedding matrices must be 2-d")
        if self.names.shape != self.descs.shape:
            raise DimensionError(
                f"name matrix {self.names.shape} and description matrix "
                f"{self.descs.shape} differ in shape"
            )
        if self.dim == 0:
            raise DimensionError("text embedding width is 0")
        if not (np.isfinite(self.names).all() and np.isfinite(self.descs).all()):
            raise ValueError("text embeddings contain NaN or Inf")

    @property
    def dim(self) -> int:
        return self.names.shape[1]

    @property
    def num_entities(self) -> int:
        return self.names.shape[0]

    @classmethod
    def load(cls, name_path, desc_path, descriptions=None) -> "TextEmbeddingStore":
        return cls(io.read_matrix(name_path), io.read_matrix(desc_path), descriptions or {})

    def save(self, name_path, desc_path) -> None:
        io.write_matrix(name_path, self.names)
        io.write_matrix(desc_path, self.descs)


def enrich(store: TextEmbeddingStore) -> np.ndarray:
    """Row i is ``[name_i; desc_i]``, width ``2 * dim``."""
    if store.names.shape[1] != store.descs.shape[1] or store.dim == 0:
        raise DimensionError("name/description widths must match and be nonzero")
    return np.concatenate([store.names, store.descs], axis=1)


def split_enriched(enriched: np.ndarray, dim: int):
    return enriched[:, :dim], enriched[:, dim:]


def slice_init(store: TextEmbeddingStore, n: int) -> np.ndarray:
    """Prefix slices ``[name_i[:n/2]; desc_i[:n/2]]`` used as text anchors."""
    if n <= 0 or n % 2:
        raise DimensionError(f"target dimension must be a positive even number, got {n}")
    half = n // 2
    if half > store.dim:
        raise DimensionError(f"n/2={half} exceeds text embedding width {store.dim}")
    return np.concatenate([store.names[:, :half], store.descs[:, :half]], axis=1)


def random_entities(num: int, n: int, seed: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(n)
    return stage_rng(seed, "entity-init").uniform(-bound, bound, size=(num, n))


def init_entities(sliced: np.ndarray, rho: float, seed: int) -> np.ndarray:
    """Mix ``rho * random + (1 - rho) * sliced``.

    The random part is uniform in ``(-1/sqrt(n), 1/sqrt(n))`` and depends only
    on the seed and the matrix shape.
    """
    if not 0.0 <= rho <= 1.0:
        raise ConfigError(f"rho must lie in [0, 1], got {rho}")
    sliced = np.asarray(sliced, dtype=np.float64)
    if rho == 0.0:
        return sliced.copy()
    rand = random_entities(sliced.shape[0], sliced.shape[1], seed)
    if rho == 1.0:
        return rand
    return rho * rand + (1.0 - rho) * sliced


def load_descriptions(path, vocab) -> dict[int, str]:
    out = {}
    for rec in io.read_jsonl(path):
        out[vocab.entity_id(rec["entity"])] = rec["description"]
    return out
