"""Command-line front end: describe, embed-check, cluster, refine, precompute,
train, eval, export, stats and fixture generation."""
from __future__ import annotations

import argparse
import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, clustering, io, refine
from .data import build_filter_index, load_dataset, read_id_file
from .evaluate import evaluate, write_report
from .fixtures import ToyKGSpec, write_toy
from .llm import ChatClient
from .models import FAMILIES, ModelState, init_relations, load_checkpoint, save_checkpoint
from .precompute import HierPrecomp, precompute
from .textembed import TextEmbeddingStore, enrich, init_entities, slice_init
from .trainer import TrainConfig, train
from .tree import HierarchyTree


@dataclass
class PipelineConfig:
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: dict = field(default_factory=lambda: {"tau_min": 0.15, "tau_max": 0.85, "step": 0.01})
    client: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineConfig":
        train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
        if "train" not in obj and set(obj) <= train_fields:
            obj = {"train": obj, "seed": obj.get("seed", 0)}
        unknown = set(obj) - {"seed", "train", "sweep", "client", "paths"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls()
        cfg.seed = int(obj.get("seed", 0))
        cfg.train = TrainConfig.from_json({"seed": cfg.seed, **obj.get("train", {})})
        cfg.sweep.update(obj.get("sweep", {}))
        cfg.client.update(obj.get("client", {}))
        cfg.paths.update(obj.get("paths", {}))
        return cfg


class UsageError(ValueError):
    pass


def _info(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _load_config(args) -> PipelineConfig:
    path = getattr(args, "config", None)
    cfg = PipelineConfig.from_json(io.load_json(path)) if path else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    return cfg


def _path(args, cfg: PipelineConfig, name: str, required: bool = True):
    val = getattr(args, name, None) or cfg.paths.get(name)
    if val is None and required:
        raise UsageError(f"missing --{name.replace('_', '-')} (or paths.{name} in the config)")
    return Path(val) if val is not None else None


def _store(args, cfg) -> TextEmbeddingStore:
    return TextEmbeddingStore.load(_path(args, cfg, "name_emb"), _path(args, cfg, "desc_emb"))


def _entity_names(args, cfg) -> list[str]:
    return load_dataset(_path(args, cfg, "data")).vocab.entities


def _client(args, cfg) -> ChatClient:
    c = cfg.client
    spec = args.backend or c.get("backend", "mock:echo")
    return ChatClient.from_spec(
        spec, endpoint=c.get("endpoint"), model=c.get("model"),
        token_env=c.get("token_env", "OPENAI_API_KEY"), cache_path=c.get("cache_path"),
        timeout=float(c.get("timeout", 60.0)), max_retries=int(c.get("max_retries", 4)),
        max_in_flight=int(c.get("max_in_flight", 4)))


def _train_config(args, cfg) -> TrainConfig:
    return cfg.train.replace(
        family=args.model, mode=args.mode, anchor_sign=args.anchor_sign,
        live_centroids=True if args.live_centroids else None,
        max_epochs=getattr(args, "epochs", None))


# --------------------------------------------------------------------------- commands

def cmd_describe(args, cfg) -> None:
    names = _entity_names(args, cfg)
    client = _client(args, cfg)
    descs = refine.describe_entities(names, client)
    io.write_jsonl(args.out, ({"entity": n, "description": d} for n, d in zip(names, descs)))
    _info(f"wrote {len(names)} descriptions to {args.out}")


def cmd_embed_check(args, cfg) -> None:
    store = _store(args, cfg)
    report = {"entities": store.num_entities, "dim": store.dim, "enriched_dim": 2 * store.dim}
    if args.data or cfg.paths.get("data"):
        n_vocab = len(_entity_names(args, cfg))
        if n_vocab != store.num_entities:
            raise ValueError(f"embedding rows ({store.num_entities}) != entity vocabulary ({n_vocab})")
        report["vocab_matches"] = True
    if args.dim is not None:
        slice_init(store, args.dim)
        report["slice_dim"] = args.dim
    print(io.dump_json(report), end="")


def cmd_cluster(args, cfg) -> None:
    sw = dict(cfg.sweep)
    for key, val in (("tau_min", args.tau_min), ("tau_max", args.tau_max), ("step", args.tau_step)):
        if val is not None:
            sw[key] = val
    store = _store(args, cfg)
    V = enrich(store)
    names = _entity_names(args, cfg)
    if len(names) != V.shape[0]:
        raise ValueError(f"embedding rows ({V.shape[0]}) != entity vocabulary ({len(names)})")
    D = clustering.cosine_distance_matrix(V)
    dend = clustering.agglomerate(V, D=D.copy())
    tau, labels = clustering.sweep(V, sw["tau_min"], sw["tau_max"], sw["step"], dendrogram=dend, D=D)
    tree = clustering.build_seed(dend, labels)
    io.dump_json(tree.to_json(names), args.out)
    print(io.dump_json({"tau": tau, "num_clusters": labels.num_clusters,
                        "silhouette": clustering.silhouette(V, labels.labels, D=D)}), end="")


def _load_tree(path, names) -> HierarchyTree:
    ids = {n: i for i, n in enumerate(names)}
    tree = HierarchyTree.from_json(io.load_json(path), ids)
    tree.validate(len(names))
    return tree


def cmd_refine(args, cfg) -> None:
    names = _entity_names(args, cfg)
    tree = _load_tree(_path(args, cfg, "hierarchy"), names)
    client = _client(args, cfg)
    split = refine.split_clusters(tree, client, names, args.min_leaf)
    out = refine.refine_bottom_up(split, client, names)
    out.validate(len(names))
    for w in split.warnings + out.warnings:
        _info(f"warning: {w}")
    io.dump_json(out.to_json(names), args.out)


def cmd_precompute(args, cfg) -> None:
    tc = _train_config(args, cfg)
    names = _entity_names(args, cfg)
    tree = _load_tree(_path(args, cfg, "hierarchy"), names)
    store = _store(args, cfg)
    anchors = slice_init(store, tc.dim)
    E0 = init_entities(anchors, tc.rho, tc.seed)
    pc = precompute(tree, E0, tc.m_neighbors, tc.ancestor_levels, tc.beta0, tc.phi)
    pc.save(args.out)
    io.write_matrix(f"{args.out}.init.kgfe", E0)
    io.write_matrix(f"{args.out}.anchors.kgfe", anchors)
    _info(f"{pc.num_clusters} clusters, max depth {int(pc.path_len.max()) + 1}")


def cmd_train(args, cfg) -> None:
    tc = _train_config(args, cfg)
    ds = load_dataset(_path(args, cfg, "data"))
    prefix = _path(args, cfg, "precomp")
    pc = HierPrecomp.load(prefix)
    E0 = io.read_matrix(f"{prefix}.init.kgfe")
    anchors = io.read_matrix(f"{prefix}.anchors.kgfe")
    if E0.shape != (ds.vocab.num_entities, tc.dim):
        raise ValueError(f"initial embeddings have shape {E0.shape}, expected "
                         f"({ds.vocab.num_entities}, {tc.dim})")
    R0 = init_relations(tc.family, ds.vocab.num_relations, tc.dim, tc.psi, tc.seed)
    state = ModelState(tc.family, E0, R0, tc.gamma, tc.p_norm, tc.modulus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = train(ds, state, pc, tc, anchors=anchors, filter_index=build_filter_index(ds),
                log_path=out / "train_log.jsonl", verbose=args.verbose)
    save_checkpoint(out, res.state, ds.vocab, {"best_epoch": res.best_epoch, "best_val_mrr": res.best_val_mrr})
    io.dump_json(tc.to_json(), out / "config.json")
    _info(f"best epoch {res.best_epoch}, val MRR {res.best_val_mrr}")


def cmd_eval(args, cfg) -> None:
    ds = load_dataset(_path(args, cfg, "data"))
    state = load_checkpoint(_path(args, cfg, "checkpoint"), ds.vocab)
    rep = evaluate(ds.split(args.split), state, build_filter_index(ds), block_size=args.block_size)
    if args.out:
        write_report(rep, args.out)
    if args.per_triple:
        rep.write_per_triple(args.per_triple, ds.vocab)
    print(rep.table())


def cmd_export(args, cfg) -> None:
    ds = load_dataset(_path(args, cfg, "data"))
    state = load_checkpoint(_path(args, cfg, "checkpoint"), ds.vocab)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for kind, names, M in (("entity", ds.vocab.entities, state.E), ("relation", ds.vocab.relations, state.R)):
        io.write_matrix(out / f"{kind}_embeddings.kgfe", M)
        with open(out / f"{kind}_embeddings.tsv", "w", encoding="utf-8") as fh:
            for name, row in zip(names, M):
                fh.write(name + "\t" + "\t".join(repr(float(x)) for x in row) + "\n")
    _info(f"exported {state.num_entities} entities and {state.R.shape[0]} relations to {out}")


def cmd_stats(args, cfg) -> None:
    hier = _path(args, cfg, "hierarchy")
    obj = io.load_json(hier)
    if args.data or cfg.paths.get("data"):
        tree = _load_tree(hier, _entity_names(args, cfg))
    else:
        names = sorted({e for n in _iter_json(obj) for e in (n.get("entities") or [])})
        tree = HierarchyTree.from_json(obj, {n: i for i, n in enumerate(names)})
    print(refine.stats(tree).table())


def _iter_json(obj):
    stack = [obj]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(node.get("children") or [])


def cmd_fixtures_gen(args, cfg) -> None:
    spec = ToyKGSpec(**io.load_json(args.spec)) if args.spec else ToyKGSpec()
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    paths = write_toy(spec, args.out)
    print(io.dump_json(paths), end="")


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--seed", type=int)
    common.add_argument("--data", help="dataset directory (train/valid/test + id files)")

    emb = argparse.ArgumentParser(add_help=False)
    emb.add_argument("--name-emb", dest="name_emb")
    emb.add_argument("--desc-emb", dest="desc_emb")

    llm = argparse.ArgumentParser(add_help=False)
    llm.add_argument("--backend", help="live | replay:<path> | mock:<policy>")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--model", choices=FAMILIES)
    model.add_argument("--mode", choices=("full", "partial"))
    model.add_argument("--anchor-sign", dest="anchor_sign", choices=("attract", "literal"))
    model.add_argument("--live-centroids", dest="live_centroids", action="store_true")

    p = argparse.ArgumentParser(prog="kgfit", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("describe", parents=[common, llm], help="generate entity descriptions")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_describe)

    s = sub.add_parser("embed-check", parents=[common, emb], help="validate text embedding files")
    s.add_argument("--dim", type=int, help="target model width to check slicing against")
    s.set_defaults(func=cmd_embed_check)

    s = sub.add_parser("cluster", parents=[common, emb], help="build the seed hierarchy")
    s.add_argument("--tau-min", dest="tau_min", type=float)
    s.add_argument("--tau-max", dest="tau_max", type=float)
    s.add_argument("--tau-step", dest="tau_step", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("refine", parents=[common, llm], help="split and refine a hierarchy")
    s.add_argument("--hierarchy")
    s.add_argument("--min-leaf", dest="min_leaf", type=int, default=4)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("precompute", parents=[common, emb, model], help="cluster/parent/neighbor lookups")
    s.add_argument("--hierarchy")
    s.add_argument("--out", required=True, help="output file prefix")
    s.set_defaults(func=cmd_precompute)

    s = sub.add_parser("train", parents=[common, model], help="fine-tune embeddings")
    s.add_argument("--precomp", help="prefix written by the precompute command")
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", required=True, help="checkpoint directory")
    s.add_argument("--verbose", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="filtered link prediction metrics")
    s.add_argument("--checkpoint")
    s.add_argument("--split", choices=("train", "valid", "test"), default="test")
    s.add_argument("--block-size", dest="block_size", type=int, default=4096)
    s.add_argument("--out", help="JSON report path")
    s.add_argument("--per-triple", dest="per_triple", help="per-triple ranks TSV path")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export", parents=[common], help="write embeddings as matrix + TSV")
    s.add_argument("--checkpoint")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("stats", parents=[common], help="hierarchy statistics table")
    s.add_argument("--hierarchy")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("fixtures", help="synthetic fixtures")
    fsub = s.add_subparsers(dest="fixtures_command", required=True)
    g = fsub.add_parser("gen", help="write a toy clustered KG")
    g.add_argument("--spec", help="ToyKGSpec JSON")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_fixtures_gen)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        args.func(args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"kgfit: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        msg = f"{exc.filename}: {exc.strerror}" if isinstance(exc, OSError) and exc.filename else str(exc)
        print(f"kgfit {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
