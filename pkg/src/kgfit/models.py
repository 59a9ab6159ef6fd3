"""Score functions and analytic gradients for six KGE families.

Entity rows have width ``n`` (even). Layout per family:

* transe, distmult: plain real vectors; relations width ``n``.
* complex, rotate: ``[real | imag]`` halves; relations ``[real | imag]``
  (complex, width ``n``) or rotation phases (rotate, width ``n/2``).
* protate: entity and relation rows are phases, width ``n``.
* hake: ``[phase | modulus]`` halves (name half drives the phase, description
  half the modulus); relations ``[phase | modulus | mix weight]``, width ``n+1``.

All scores are "higher is more plausible". Kernels broadcast over leading
axes, so ``H`` of shape ``(B, 1, n)`` against ``T`` of shape ``(B, K, n)``
scores ``K`` candidates per row.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .rng import stage_rng
from .textembed import ConfigError

FAMILIES = ("transe", "distmult", "complex", "protate", "rotate", "hake")
TWO_PI = 2.0 * np.pi


def relation_width(family: str, n: int) -> int:
    if family in ("transe", "distmult", "complex", "protate"):
        return n
    if family == "rotate":
        return n // 2
    if family == "hake":
        return n + 1
    raise ValueError(f"unknown model family {family!r}")


@dataclass
class ModelState:
    family: str
    E: np.ndarray
    R: np.ndarray
    gamma: float = 12.0
    p_norm: int = 1
    modulus: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        self.E = np.asarray(self.E, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        if self.n % 2:
            raise ValueError(f"entity width must be even, got {self.n}")
        if self.R.shape[1] != relation_width(self.family, self.n):
            raise ValueError(
                f"{self.family} expects relation width {relation_width(self.family, self.n)}, "
                f"got {self.R.shape[1]}"
            )
        if self.p_norm not in (1, 2):
            raise ValueError("p_norm must be 1 or 2")

    @property
    def n(self) -> int:
        return self.E.shape[1]

    @property
    def num_entities(self) -> int:
        return self.E.shape[0]

    def copy(self) -> "ModelState":
        return ModelState(self.family, self.E.copy(), self.R.copy(), self.gamma, self.p_norm, self.modulus)

    @property
    def constants(self) -> dict:
        return {"p_norm": self.p_norm, "modulus": self.modulus}


def _sign(x):
    return np.sign(x)


def _halves(x):
    k = x.shape[-1] // 2
    return x[..., :k], x[..., k:]


def _l2_grad(x):
    nrm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    safe = np.where(nrm > 0, nrm, 1.0)
    return nrm[..., 0], np.where(nrm > 0, -x / safe, 0.0)


# --------------------------------------------------------------------------- kernels

def score_batch(state: ModelState, H, R, T) -> np.ndarray:
    fam = state.family
    if fam == "transe":
        x = H + R - T
        if state.p_norm == 1:
            return -np.sum(np.abs(x), axis=-1)
        return -np.sqrt(np.sum(x * x, axis=-1))
    if fam == "distmult":
        return np.sum(H * R * T, axis=-1)
    if fam == "complex":
        a, b = _halves(H)
        c, d = _halves(R)
        e, f = _halves(T)
        return np.sum(a * c * e + b * c * f + a * d * f - b * d * e, axis=-1)
    if fam == "rotate":
        a, b = _halves(H)
        e, f = _halves(T)
        cos, sin = np.cos(R), np.sin(R)
        x = a * cos - b * sin - e
        y = a * sin + b * cos - f
        return -np.sqrt(np.sum(x * x + y * y, axis=-1))
    if fam == "protate":
        u = 0.5 * (H + R - T)
        return -2.0 * state.modulus * np.sum(np.abs(np.sin(u)), axis=-1)
    if fam == "hake":
        k = H.shape[-1] // 2
        hp, hm = H[..., :k], H[..., k:]
        tp, tm = T[..., :k], T[..., k:]
        rp, rm, lam = R[..., :k], R[..., k:2 * k], R[..., 2 * k]
        x = hm * rm - tm
        u = 0.5 * (hp + rp - tp)
        return -np.sqrt(np.sum(x * x, axis=-1)) - lam * np.sum(np.abs(np.sin(u)), axis=-1)
    raise ValueError(fam)


def score_grad_batch(state: ModelState, H, R, T):
    """Scores and gradients w.r.t. H, R, T, each of the broadcast shape.

    Non-differentiable points of absolute values and norms take gradient 0.
    """
    fam = state.family
    H, R, T = np.broadcast_arrays(H, R, T) if fam not in ("rotate", "hake") else (H, R, T)
    if fam == "transe":
        x = H + R - T
        if state.p_norm == 1:
            s = -np.sum(np.abs(x), axis=-1)
            g = -_sign(x)
        else:
            nrm, g = _l2_grad(x)
            s = -nrm
        return s, g, g.copy(), -g
    if fam == "distmult":
        return np.sum(H * R * T, axis=-1), R * T, H * T, H * R
    if fam == "complex":
        a, b = _halves(H)
        c, d = _halves(R)
        e, f = _halves(T)
        s = np.sum(a * c * e + b * c * f + a * d * f - b * d * e, axis=-1)
        gH = np.concatenate([c * e + d * f, c * f - d * e], axis=-1)
        gR = np.concatenate([a * e + b * f, a * f - b * e], axis=-1)
        gT = np.concatenate([a * c - b * d, b * c + a * d], axis=-1)
        return s, gH, gR, gT
    if fam == "rotate":
        a, b = _halves(H)
        e, f = _halves(T)
        cos, sin = np.cos(R), np.sin(R)
        re = a * cos - b * sin
        im = a * sin + b * cos
        x, y = re - e, im - f
        nrm = np.sqrt(np.sum(x * x + y * y, axis=-1, keepdims=True))
        safe = np.where(nrm > 0, nrm, 1.0)
        gx = np.where(nrm > 0, -x / safe, 0.0)
        gy = np.where(nrm > 0, -y / safe, 0.0)
        gH = np.concatenate([gx * cos + gy * sin, -gx * sin + gy * cos], axis=-1)
        gR = -gx * im + gy * re
        gT = np.concatenate([-gx, -gy], axis=-1)
        shape = np.broadcast_shapes(H.shape, T.shape)
        return -nrm[..., 0], np.broadcast_to(gH, shape), gR, np.broadcast_to(gT, shape)
    if fam == "protate":
        u = 0.5 * (H + R - T)
        su = np.sin(u)
        s = -2.0 * state.modulus * np.sum(np.abs(su), axis=-1)
        du = -2.0 * state.modulus * _sign(su) * np.cos(u)
        return s, 0.5 * du, 0.5 * du, -0.5 * du
    if fam == "hake":
        k = H.shape[-1] // 2
        hp, hm = H[..., :k], H[..., k:]
        tp, tm = T[..., :k], T[..., k:]
        rp, rm, lam = R[..., :k], R[..., k:2 * k], R[..., 2 * k:]
        x = hm * rm - tm
        nrm, gx = _l2_grad(x)
        u = 0.5 * (hp + rp - tp)
        su = np.sin(u)
        phase = np.sum(np.abs(su), axis=-1, keepdims=True)
        s = -nrm - lam[..., 0] * phase[..., 0]
        du = -lam * _sign(su) * np.cos(u)
        gH = np.concatenate([0.5 * du, gx * rm], axis=-1)
        gT = np.concatenate([-0.5 * du, -gx], axis=-1)
        gR = np.concatenate([0.5 * du, gx * hm, -phase], axis=-1)
        shape = np.broadcast_shapes(H.shape, T.shape)
        return s, np.broadcast_to(gH, shape), gR, np.broadcast_to(gT, shape)
    raise ValueError(fam)


# --------------------------------------------------------------------------- per-triple API

def score(state: ModelState, h: int, r: int, t: int) -> float:
    return float(score_batch(state, state.E[h], state.R[r], state.E[t]))


def score_grad(state: ModelState, h: int, r: int, t: int):
    s, gh, gr, gt = score_grad_batch(state, state.E[h], state.R[r], state.E[t])
    return float(s), np.array(gh), np.array(gr), np.array(gt)


def score_tails(state: ModelState, h: int, r: int) -> np.ndarray:
    """Scores of ``(h, r, c)`` for every entity ``c``."""
    return score_batch(state, state.E[h][None, :], state.R[r][None, :], state.E)


def score_heads(state: ModelState, r: int, t: int) -> np.ndarray:
    return score_batch(state, state.E, state.R[r][None, :], state.E[t][None, :])


# --------------------------------------------------------------------------- initialization & I/O

def init_relations(family: str, num_relations: int, n: int, psi: float = 0.01, seed: int = 0) -> np.ndarray:
    """Normal(0, psi^2) entries; phase columns uniform in [0, 2*pi);
    the HAKE mix weight column starts at 1."""
    if psi <= 0:
        raise ConfigError(f"psi must be positive, got {psi}")
    width = relation_width(family, n)
    rng = stage_rng(seed, f"relation-init:{family}")
    R = rng.normal(0.0, psi, size=(num_relations, width))
    if family in ("rotate", "protate"):
        R = rng.uniform(0.0, TWO_PI, size=(num_relations, width))
    elif family == "hake":
        k = n // 2
        R[:, :k] = rng.uniform(0.0, TWO_PI, size=(num_relations, k))
        R[:, -1] = 1.0
    return R


def vocab_hash(names) -> str:
    return hashlib.sha256("\n".join(names).encode("utf-8")).hexdigest()


def save_checkpoint(directory, state: ModelState, vocab=None, extra: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    io.write_matrix(d / "entities.kgfe", state.E)
    io.write_matrix(d / "relations.kgfe", state.R)
    meta = {
        "family": state.family,
        "n": state.n,
        "m_rel": int(state.R.shape[1]),
        "gamma": state.gamma,
        "constants": state.constants,
    }
    if vocab is not None:
        meta["entity_vocab_sha256"] = vocab_hash(vocab.entities)
        meta["relation_vocab_sha256"] = vocab_hash(vocab.relations)
    if extra:
        meta.update(extra)
    io.dump_json(meta, d / "meta.json")


def load_checkpoint(directory, vocab=None) -> ModelState:
    d = Path(directory)
    meta = io.load_json(d / "meta.json")
    if vocab is not None and "entity_vocab_sha256" in meta:
        if meta["entity_vocab_sha256"] != vocab_hash(vocab.entities):
            raise ValueError(f"{d}: checkpoint entity vocabulary does not match the dataset")
        if meta["relation_vocab_sha256"] != vocab_hash(vocab.relations):
            raise ValueError(f"{d}: checkpoint relation vocabulary does not match the dataset")
    c = meta.get("constants", {})
    return ModelState(meta["family"], io.read_matrix(d / "entities.kgfe"),
                      io.read_matrix(d / "relations.kgfe"), meta["gamma"],
                      int(c.get("p_norm", 1)), float(c.get("modulus", 1.0)))
