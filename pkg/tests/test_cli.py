import json
import subprocess
import sys

import pytest

from kgfit import io
from kgfit.cli import main

CFG = {"seed": 0, "train": {"dim": 16, "gamma": 6.0, "num_negatives": 8, "batch_size": 32,
                            "lr": 0.01, "max_epochs": 3, "eval_every": 1}}


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "spec.json").write_text(json.dumps({"clusters": 4, "per_cluster": 6, "dim": 8}))
    (d / "cfg.json").write_text(json.dumps(CFG))
    assert main(["fixtures", "gen", "--spec", str(d / "spec.json"), "--out", str(d / "toy")]) == 0
    return d


def emb(d):
    return ["--name-emb", str(d / "toy/name_emb.kgfe"), "--desc-emb", str(d / "toy/desc_emb.kgfe")]


def run(d, *args):
    return main([str(a) for a in args])


def test_pipeline(ws, capsys):
    d = ws
    assert run(d, "embed-check", "--data", d / "toy", *emb(d), "--dim", 16) == 0
    assert run(d, "describe", "--data", d / "toy", "--backend", "mock:echo", "--out", d / "desc.jsonl") == 0
    first = json.loads((d / "desc.jsonl").read_text().splitlines()[0])
    assert first["description"] == f"{first['entity']} is a [mock description of {first['entity']}]"
    capsys.readouterr()
    assert run(d, "cluster", "--data", d / "toy", *emb(d), "--tau-min", 0.15, "--tau-max", 0.85,
               "--out", d / "seed.json") == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["num_clusters"] == 4
    assert run(d, "refine", "--data", d / "toy", "--hierarchy", d / "seed.json",
               "--backend", "mock:halve-lexicographic", "--out", d / "lhr.json") == 0
    assert run(d, "stats", "--hierarchy", d / "lhr.json") == 0
    assert "# Cluster" in capsys.readouterr().out
    assert run(d, "precompute", "--config", d / "cfg.json", "--data", d / "toy", *emb(d),
               "--hierarchy", d / "lhr.json", "--out", d / "pc/p") == 0
    assert run(d, "train", "--config", d / "cfg.json", "--data", d / "toy", "--precomp", d / "pc/p",
               "--out", d / "ckpt", "--model", "transe") == 0
    log = (d / "ckpt/train_log.jsonl").read_text().splitlines()
    assert len(log) == 3
    assert run(d, "eval", "--data", d / "toy", "--checkpoint", d / "ckpt", "--out", d / "rep.json",
               "--per-triple", d / "ranks.tsv") == 0
    assert "hits@10" in capsys.readouterr().out
    assert io.load_json(d / "rep.json")["tie_convention"] == "mean"
    assert run(d, "export", "--data", d / "toy", "--checkpoint", d / "ckpt", "--out", d / "exp") == 0
    rows = (d / "exp/entity_embeddings.tsv").read_text().splitlines()
    assert len(rows) == 24 and len(rows[0].split("\t")) == 17


def test_never_split_keeps_topology(ws):
    d = ws
    if not (d / "seed.json").exists():
        assert run(d, "cluster", "--data", d / "toy", *emb(d), "--out", d / "seed.json") == 0
    assert run(d, "refine", "--data", d / "toy", "--hierarchy", d / "seed.json",
               "--backend", "mock:never-split", "--out", d / "same.json") == 0
    assert _shape(io.load_json(d / "seed.json")) == _shape(io.load_json(d / "same.json"))


def _shape(obj):
    if obj.get("entities") is not None:
        return tuple(sorted(obj["entities"]))
    return tuple(_shape(c) for c in obj["children"])


def test_missing_config(ws, capsys):
    rc = run(ws, "train", "--config", ws / "missing.json", "--data", ws / "toy", "--out", ws / "x")
    assert rc != 0
    assert "missing.json" in capsys.readouterr().err


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["cluster", "--bogus"])
    assert exc.value.code == 2


def test_missing_path_is_usage_error(ws):
    assert run(ws, "stats") == 2


def test_module_error_exit_code(ws, capsys):
    assert run(ws, "refine", "--data", ws / "toy", "--hierarchy", ws / "nope.json",
               "--backend", "mock:echo", "--out", ws / "o.json") == 1


def test_console_entry_point(ws):
    out = subprocess.run([sys.executable, "-m", "kgfit.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()
