"""Fine-tuning objective (hierarchy + text anchor + link prediction) and the
mini-batch Adam loop."""
from __future__ import annotations

import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from . import io
from .data import Dataset, FilterIndex, Triple, as_array
from .evaluate import evaluate
from .models import ModelState, score_grad_batch
from .precompute import HierPrecomp
from .rng import stage_rng
from .textembed import ConfigError

MODES = ("full", "partial")
ANCHOR_SIGNS = ("attract", "literal")


class SamplingError(RuntimeError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    family: str = "transe"
    dim: int = 1024
    lambdas: tuple = (1.0, 0.4, 0.5)
    zetas: tuple = (0.5, 0.5, 3.5)
    rho: float = 0.5
    psi: float = 0.01
    beta0: float = 1.2
    phi: float = 0.4
    m_neighbors: int = 5
    ancestor_levels: int = 2
    gamma: float = 24.0
    p_norm: int = 1
    modulus: float = 1.0
    num_negatives: int = 512
    batch_size: int = 512
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 100
    mode: str = "full"
    anchor_sign: str = "attract"
    live_centroids: bool = False
    filtered_negatives: bool = False
    eval_every: int = 10
    plateau_patience: int = 0
    seed: int = 0

    def __post_init__(self):
        self.lambdas = tuple(float(x) for x in self.lambdas)
        self.zetas = tuple(float(x) for x in self.zetas)
        self.validate()

    def validate(self) -> None:
        if len(self.lambdas) != 3 or len(self.zetas) != 3:
            raise ConfigError("lambdas and zetas need three entries each")
        if min(self.lambdas + self.zetas) < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.num_negatives < 1:
            raise ConfigError("num_negatives must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.anchor_sign not in ANCHOR_SIGNS:
            raise ConfigError(f"anchor_sign must be one of {ANCHOR_SIGNS}, got {self.anchor_sign!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambdas"], d["zetas"] = list(self.lambdas), list(self.zetas)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_json(io.load_json(path))

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **{k: v for k, v in kw.items() if v is not None})


@dataclass
class LossBreakdown:
    hier: float
    anchor: float
    link: float
    total: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def total_loss(hier: float, anchor: float, link: float, zetas) -> float:
    z1, z2, z3 = zetas
    return z1 * hier + z2 * anchor + z3 * link


# --------------------------------------------------------------------------- distances

def cos_dist_grad(X, Y):
    """Row-wise cosine distance ``1 - cos(x, y)`` and its gradient w.r.t. ``x``.

    ``X`` is ``(..., n)``; ``Y`` broadcasts against it. Zero rows get distance 1
    and gradient 0.
    """
    nx = np.linalg.norm(X, axis=-1, keepdims=True)
    ny = np.linalg.norm(Y, axis=-1, keepdims=True)
    ok = (nx > 0) & (ny > 0)
    nx_s = np.where(nx > 0, nx, 1.0)
    ny_s = np.where(ny > 0, ny, 1.0)
    dot = np.sum(X * Y, axis=-1, keepdims=True)
    cos = np.where(ok, dot / (nx_s * ny_s), 0.0)
    grad = np.where(ok, -(Y / (nx_s * ny_s) - cos * X / (nx_s * nx_s)), 0.0)
    return 1.0 - cos[..., 0], grad


# --------------------------------------------------------------------------- constraint terms

def hier_terms(X: np.ndarray, entities, precomp: HierPrecomp, lambdas):
    """Per-row hierarchy loss and gradient for embeddings ``X`` of ``entities``."""
    l1, l2, l3 = lambdas
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    cids = precomp.entity_cluster[np.asarray(entities, dtype=np.int64).reshape(-1)]
    loss = np.zeros(X.shape[0])
    grad = np.zeros_like(X)

    if l1:
        d, g = cos_dist_grad(X, precomp.cluster_emb[cids])
        loss += l1 * d
        grad += l1 * g

    if l2:
        nb = precomp.neighbors[cids]                      # (B, m)
        cnt = precomp.neighbor_count[cids]
        mask = nb >= 0
        if mask.any():
            d, g = cos_dist_grad(X[:, None, :], precomp.cluster_emb[np.where(mask, nb, 0)])
            w = np.where(mask, 1.0 / np.maximum(cnt, 1)[:, None], 0.0)
            loss -= l2 * np.sum(w * d, axis=1)
            grad -= l2 * np.sum(w[..., None] * g, axis=1)

    if l3:
        L = precomp.path_len[cids]                         # h - 1 ancestors per row
        if np.any(L >= 2):
            paths = precomp.parent_paths[cids]             # (B, Hmax)
            H = paths.shape[1]
            pos = np.arange(1, H + 1)[None, :]             # ancestor index i = 1..Hmax
            betas = np.concatenate([[0.0], precomp.betas[:H], [0.0]])
            # sum_{j=1}^{L-1} b_j (d_{j+1} - d_j) = sum_i (b_{i-1}[i>=2] - b_i[i<=L-1]) d_i
            w = (np.where(pos >= 2, betas[pos - 1], 0.0)
                 - np.where(pos <= (L - 1)[:, None], betas[np.minimum(pos, H)], 0.0))
            w = np.where((pos <= L[:, None]) & (L[:, None] >= 2), w, 0.0)
            w = w / np.maximum(L, 1)[:, None]
            d, g = cos_dist_grad(X[:, None, :], precomp.node_emb[np.where(paths >= 0, paths, 0)])
            loss -= l3 * np.sum(w * d, axis=1)
            grad -= l3 * np.sum(w[..., None] * g, axis=1)
    return loss, grad


def hier_loss(entity: int, E: np.ndarray, precomp: HierPrecomp, lambdas):
    loss, grad = hier_terms(E[entity][None, :], [entity], precomp, lambdas)
    return float(loss[0]), grad[0]


def anchor_terms(X, anchors, sign: str = "attract"):
    d, g = cos_dist_grad(np.atleast_2d(X), np.atleast_2d(anchors))
    s = 1.0 if sign == "attract" else -1.0
    return s * d, s * g


def anchor_loss(entity: int, E: np.ndarray, anchors: np.ndarray, sign: str = "attract"):
    if E.shape[1] != anchors.shape[1]:
        raise ValueError(f"embedding width {E.shape[1]} != anchor width {anchors.shape[1]}")
    loss, grad = anchor_terms(E[entity], anchors[entity], sign)
    return float(loss[0]), grad[0]


# --------------------------------------------------------------------------- link prediction term

def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def link_loss_from_distances(d_pos, d_neg, gamma: float) -> np.ndarray:
    """Per-positive loss with distances ``d = -score``; ``d_neg`` is ``(B, K)``."""
    d_pos = np.asarray(d_pos, dtype=np.float64)
    d_neg = np.atleast_2d(np.asarray(d_neg, dtype=np.float64))
    return _softplus(d_pos - gamma) + np.mean(_softplus(gamma - d_neg), axis=-1)


def sample_negatives(triple: Triple, side: str, k: int, rng: np.random.Generator,
                     num_entities: int, filter_index: FilterIndex | None = None) -> np.ndarray:
    if k < 1:
        raise ValueError("k must be >= 1")
    triple = Triple(*triple)
    true = triple.tail if side == "tail" else triple.head
    if filter_index is None:
        if num_entities < 2:
            raise SamplingError("need at least two entities to corrupt a triple")
        draw = rng.integers(0, num_entities - 1, size=k)
        return draw + (draw >= true)
    banned = set(filter_index.known(triple, side)) | {true}
    pool = np.setdiff1d(np.arange(num_entities), np.fromiter(banned, dtype=np.int64))
    if pool.size == 0:
        raise SamplingError(f"no negative candidates left for {tuple(triple)} ({side})")
    return pool[rng.integers(0, pool.size, size=k)]


class SparseGrad:
    """Accumulates row gradients; ``reduce`` sums duplicates in first-seen-sorted order."""

    def __init__(self, width: int):
        self.width = width
        self.ids: list[np.ndarray] = []
        self.rows: list[np.ndarray] = []

    def add(self, ids, rows) -> None:
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        self.ids.append(ids)
        self.rows.append(np.asarray(rows, dtype=np.float64).reshape(ids.size, self.width))

    def reduce(self):
        if not self.ids:
            return np.zeros(0, dtype=np.int64), np.zeros((0, self.width))
        ids = np.concatenate(self.ids)
        rows = np.concatenate(self.rows)
        uniq, inv = np.unique(ids, return_inverse=True)
        out = np.zeros((uniq.size, self.width))
        np.add.at(out, inv, rows)
        return uniq, out

    def dense(self, num_rows: int) -> np.ndarray:
        ids, rows = self.reduce()
        out = np.zeros((num_rows, self.width))
        out[ids] = rows
        return out


def link_loss(state: ModelState, positives, negatives, corrupt_tail, gE: SparseGrad | None = None,
              gR: SparseGrad | None = None) -> float:
    """Mean link loss over positives; accumulates gradients into ``gE``/``gR``."""
    P = as_array(positives)
    negatives = np.asarray(negatives, dtype=np.int64)
    corrupt_tail = np.asarray(corrupt_tail, dtype=bool)
    B = P.shape[0]
    gamma = state.gamma
    total = 0.0
    for tail_side in (True, False):
        sel = np.flatnonzero(corrupt_tail == tail_side)
        if sel.size == 0:
            continue
        h, r, t = P[sel, 0], P[sel, 1], P[sel, 2]
        neg = negatives[sel]
        Hp, Rp, Tp = state.E[h], state.R[r], state.E[t]
        s_pos, gh_p, gr_p, gt_p = score_grad_batch(state, Hp, Rp, Tp)
        if tail_side:
            s_neg, gh_n, gr_n, gt_n = score_grad_batch(state, Hp[:, None, :], Rp[:, None, :], state.E[neg])
        else:
            s_neg, gh_n, gr_n, gt_n = score_grad_batch(state, state.E[neg], Rp[:, None, :], Tp[:, None, :])
        K = neg.shape[1]
        total += float(np.sum(_softplus(-(gamma + s_pos)) + np.mean(_softplus(s_neg + gamma), axis=1)))
        if gE is None and gR is None:
            continue
        c_pos = (-_sigmoid(-(gamma + s_pos)) / B)[:, None]
        c_neg = (_sigmoid(s_neg + gamma) / (K * B))[..., None]
        gh_n = np.broadcast_to(gh_n, c_neg.shape[:2] + (state.n,)) * c_neg
        gt_n = np.broadcast_to(gt_n, c_neg.shape[:2] + (state.n,)) * c_neg
        gr_n = np.broadcast_to(gr_n, c_neg.shape[:2] + (state.R.shape[1],)) * c_neg
        if gE is not None:
            gE.add(h, c_pos * gh_p)
            gE.add(t, c_pos * gt_p)
            if tail_side:
                gE.add(h, gh_n.sum(axis=1))
                gE.add(neg, gt_n)
            else:
                gE.add(neg, gh_n)
                gE.add(t, gt_n.sum(axis=1))
        if gR is not None:
            gR.add(r, c_pos * gr_p + gr_n.sum(axis=1))
    return total / B


# --------------------------------------------------------------------------- batch objective

def constrained_entities(positives, negatives, mode: str) -> np.ndarray:
    P = as_array(positives)
    neg = np.asarray(negatives, dtype=np.int64).reshape(-1)
    if mode == "full":
        return np.concatenate([P[:, 0], P[:, 2], neg])
    if mode == "partial":
        return neg
    raise ConfigError(f"unknown constraint mode {mode!r}")


def batch_objective(state: ModelState, precomp: HierPrecomp | None, anchors: np.ndarray | None,
                    positives, negatives, corrupt_tail, config: TrainConfig, grads: bool = True):
    """Loss breakdown for one batch, plus reduced sparse gradients for E and R."""
    gE = SparseGrad(state.n) if grads else None
    gR = SparseGrad(state.R.shape[1]) if grads else None
    z1, z2, z3 = config.zetas
    link = link_loss(state, positives, negatives, corrupt_tail, gE, gR)
    if gE is not None and z3 != 1.0:
        gE.rows = [z3 * r for r in gE.rows]
        gR.rows = [z3 * r for r in gR.rows]

    ents = constrained_entities(positives, negatives, config.mode)
    # mean over occurrences == count-weighted mean over distinct entities
    uniq, counts = np.unique(ents, return_counts=True)
    w = counts / ents.size
    X = state.E[uniq]
    hier = anchor = 0.0
    if precomp is not None and z1:
        lv, lg = hier_terms(X, uniq, precomp, config.lambdas)
        hier = float(w @ lv)
        if gE is not None:
            gE.add(uniq, (z1 * w)[:, None] * lg)
    if anchors is not None and z2:
        av, ag = anchor_terms(X, anchors[uniq], config.anchor_sign)
        anchor = float(w @ av)
        if gE is not None:
            gE.add(uniq, (z2 * w)[:, None] * ag)
    bd = LossBreakdown(hier, anchor, link, total_loss(hier, anchor, link, config.zetas))
    if not grads:
        return bd, None, None
    return bd, gE.reduce(), gR.reduce()


# --------------------------------------------------------------------------- optimizer

class SparseAdam:
    def __init__(self, shape, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps

    def step(self, param: np.ndarray, ids: np.ndarray, g: np.ndarray, t: int) -> None:
        if ids.size == 0:
            return
        m = self.m[ids] = self.b1 * self.m[ids] + (1 - self.b1) * g
        v = self.v[ids] = self.b2 * self.v[ids] + (1 - self.b2) * g * g
        mhat = m / (1 - self.b1 ** t)
        vhat = v / (1 - self.b2 ** t)
        param[ids] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# --------------------------------------------------------------------------- loop

@dataclass
class TrainResult:
    state: ModelState
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_mrr: float | None = None
    final_state: ModelState | None = None


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def train(dataset: Dataset, state: ModelState, precomp: HierPrecomp | None, config: TrainConfig,
          anchors: np.ndarray | None = None, filter_index: FilterIndex | None = None,
          log_path=None, verbose: bool = False) -> TrainResult:
    """Train ``state`` in place and return the best-validation-MRR copy.

    Without a validation split the final state is returned.
    """
    config.validate()
    state = state.copy()
    if config.max_epochs == 0:
        return TrainResult(state, final_state=state)
    if anchors is not None and anchors.shape != state.E.shape:
        raise ValueError(f"anchor matrix shape {anchors.shape} != entity matrix {state.E.shape}")
    train_arr = as_array(dataset.train)
    if train_arr.shape[0] == 0:
        raise ValueError("training split is empty")
    rng = stage_rng(config.seed, "train")
    neg_filter = filter_index if config.filtered_negatives else None
    optE = SparseAdam(state.E.shape, config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
    optR = SparseAdam(state.R.shape, config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
    base_precomp = precomp
    step = 0
    history = []
    best = (None, 0, state.copy())
    stale = 0
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            if config.live_centroids and base_precomp is not None and epoch > 1:
                precomp = base_precomp.refreshed(state.E)
            order = rng.permutation(train_arr.shape[0])
            sums = np.zeros(4)
            nb = 0
            for start in range(0, order.size, config.batch_size):
                idx = order[start:start + config.batch_size]
                pos = train_arr[idx]
                corrupt_tail = (np.arange(start, start + idx.size) % 2) == 0
                negs = np.stack([
                    sample_negatives(Triple(*map(int, p)), "tail" if ct else "head", config.num_negatives,
                                     rng, state.num_entities, neg_filter)
                    for p, ct in zip(pos, corrupt_tail)
                ])
                bd, (eids, eg), (rids, rg) = batch_objective(state, precomp, anchors, pos, negs,
                                                             corrupt_tail, config)
                if not math.isfinite(bd.total):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, batch {nb}: {bd.as_dict()}")
                step += 1
                optE.step(state.E, eids, eg, step)
                optR.step(state.R, rids, rg, step)
                sums += (bd.hier, bd.anchor, bd.link, bd.total)
                nb += 1
            hier, anchor, link = (float(x) for x in sums[:3] / nb)
            rec = {"epoch": epoch, "hier": hier, "anchor": anchor, "link": link,
                   "total": total_loss(hier, anchor, link, config.zetas),
                   "val_mrr": None, "val_hits10": None}
            if dataset.valid and config.eval_every > 0 and (
                    epoch % config.eval_every == 0 or epoch == config.max_epochs):
                rep = evaluate(dataset.valid, state, filter_index)
                rec["val_mrr"], rec["val_hits10"] = float(rep.mrr), float(rep.hits(10))
                if best[0] is None or rep.mrr > best[0]:
                    best = (rep.mrr, epoch, state.copy())
                    stale = 0
                else:
                    stale += 1
                    if config.plateau_patience and stale >= config.plateau_patience:
                        optE.lr /= 2
                        optR.lr /= 2
                        stale = 0
            history.append(rec)
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
                log_fh.flush()
            if verbose:
                _log(f"epoch {epoch}: total={rec['total']:.5f} link={link:.5f} "
                     f"hier={hier:.5f} anchor={anchor:.5f} val_mrr={rec['val_mrr']}")
    finally:
        if log_fh:
            log_fh.close()
    if best[0] is None:
        return TrainResult(state, history, config.max_epochs, None, state)
    return TrainResult(best[2], history, best[1], best[0], state)
