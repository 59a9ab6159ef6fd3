import pytest

from kgfit.data import (Dataset, KGDataError, Triple, TripleParseError, Vocab, VocabError,
                        build_filter_index, load_dataset, load_triples, read_id_file,
                        write_id_file, write_triples)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_first_appearance_order(tmp_path):
    p = _write(tmp_path / "t.tsv", "a\tr\tb\nb\tr\tc\n")
    vocab, triples = load_triples(p)
    assert vocab.entities == ["a", "b", "c"]
    assert vocab.relations == ["r"]
    assert triples == [(0, 0, 1), (1, 0, 2)]


def test_empty_file(tmp_path):
    vocab, triples = load_triples(_write(tmp_path / "t.tsv", ""))
    assert vocab.entities == [] and vocab.relations == [] and triples == []


def test_column_count_error_reports_line(tmp_path):
    with pytest.raises(TripleParseError) as exc:
        load_triples(_write(tmp_path / "t.tsv", "a\tr\n"))
    assert exc.value.lineno == 1


def test_reuse_mode_rejects_unknown(tmp_path):
    vocab = Vocab(["a", "b"], ["r"])
    with pytest.raises(VocabError):
        load_triples(_write(tmp_path / "t.tsv", "a\tr\tz\n"), "reuse", vocab)
    _, triples = load_triples(_write(tmp_path / "u.tsv", "b\tr\ta\n"), "reuse", vocab)
    assert triples == [(1, 0, 0)]


def test_crlf_lines(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_bytes(b"a\tr\tb\r\n")
    _, triples = load_triples(p)
    assert triples == [(0, 0, 1)]


def test_filter_index_union():
    ds = Dataset(Vocab(["a", "b", "c"], ["r"]), [Triple(0, 0, 1)], [], [Triple(0, 0, 2)])
    idx = build_filter_index(ds)
    assert idx.true_tails(0, 0) == {1, 2}
    assert idx.true_heads(0, 2) == {0}


def test_filter_index_empty():
    ds = Dataset(Vocab(["a"], ["r"]), [])
    assert len(build_filter_index(ds)) == 0


def test_filter_index_repeat_across_splits():
    ds = Dataset(Vocab(["a", "b"], ["r"]), [Triple(0, 0, 1)], [], [Triple(0, 0, 1)])
    assert build_filter_index(ds).true_tails(0, 0) == {1}


def test_duplicates_within_split_rejected():
    with pytest.raises(KGDataError):
        Dataset(Vocab(["a", "b"], ["r"]), [Triple(0, 0, 1), Triple(0, 0, 1)])


def test_out_of_bounds_rejected():
    with pytest.raises(VocabError):
        Dataset(Vocab(["a"], ["r"]), [Triple(0, 0, 3)])


def test_dataset_roundtrip_with_sidecars(tmp_path, small_kg):
    ds, _ = small_kg
    for split in ("train", "valid", "test"):
        write_triples(tmp_path / f"{split}.tsv", ds.split(split), ds.vocab)
    write_id_file(tmp_path / "entity2id.tsv", ds.vocab.entities)
    write_id_file(tmp_path / "relation2id.tsv", ds.vocab.relations)
    back = load_dataset(tmp_path)
    assert back.vocab.entities == ds.vocab.entities
    assert back.train == ds.train and back.valid == ds.valid and back.test == ds.test


def test_id_file_must_be_dense(tmp_path):
    p = _write(tmp_path / "e.tsv", "a\t0\nb\t2\n")
    with pytest.raises(VocabError):
        read_id_file(p)
