import numpy as np
import pytest

from helpers import numeric_grad, rel_err
from kgfit import models
from kgfit.models import FAMILIES, ModelState, init_relations, relation_width, score, score_grad
from kgfit.textembed import ConfigError


def state(family, E, R, **kw):
    return ModelState(family, np.atleast_2d(np.asarray(E, float)), np.atleast_2d(np.asarray(R, float)), **kw)


def test_transe_exact_translation():
    s = state("transe", [[1.0, 2.0], [1.5, 1.0]], [[0.5, -1.0]])
    assert score(s, 0, 0, 1) == 0.0


def test_distmult_arithmetic():
    s = state("distmult", [[1.0, 2.0], [3.0, 1.0]], [[1.0, 1.0]])
    assert score(s, 0, 0, 1) == 5.0


def test_rotate_identity():
    s = state("rotate", [[0.3, -0.2, 0.5, 0.1]], [[0.0, 0.0]])
    assert score(s, 0, 0, 0) == 0.0


def test_hake_both_terms_vanish():
    hp, rp = np.array([0.5, 1.0]), np.array([6.0, 5.5])
    hm, rm = np.array([2.0, 0.5]), np.array([1.5, 4.0])
    tp = hp + rp - 2 * np.pi
    E = [np.r_[hp, hm], np.r_[tp, hm * rm]]
    s = state("hake", E, [np.r_[rp, rm, 1.0]])
    assert score(s, 0, 0, 1) == pytest.approx(0.0, abs=1e-12)


def test_distmult_grad_is_r_times_t(rng):
    E, R = rng.normal(size=(2, 6)), rng.normal(size=(1, 6))
    _, gh, _, _ = score_grad(state("distmult", E, R), 0, 0, 1)
    np.testing.assert_array_equal(gh, R[0] * E[1])


def test_protate_stationary_point():
    E = np.array([[0.3, 1.0], [0.5, 1.2]])
    R = np.array([[0.2, 0.2]])
    _, gh, gr, gt = score_grad(state("protate", E, R), 0, 0, 1)
    assert not gh.any() and not gr.any() and not gt.any()


@pytest.mark.parametrize("family,p_norm", [(f, 1) for f in FAMILIES] + [("transe", 2)])
def test_score_gradients(family, p_norm, rng):
    n = 8
    for _ in range(10):
        E = rng.normal(size=(2, n))
        R = rng.normal(size=(1, relation_width(family, n)))
        s = state(family, E, R, p_norm=p_norm)
        _, gh, gr, gt = score_grad(s, 0, 0, 1)
        f = lambda: score(s, 0, 0, 1)
        assert rel_err(gh, numeric_grad(f, s.E[0])) < 1e-4
        assert rel_err(gt, numeric_grad(f, s.E[1])) < 1e-4
        assert rel_err(gr, numeric_grad(f, s.R[0])) < 1e-4


@pytest.mark.parametrize("family", FAMILIES)
def test_batch_matches_scalar(family, rng):
    n = 6
    s = state(family, rng.normal(size=(5, n)), rng.normal(size=(2, relation_width(family, n))))
    tails = models.score_tails(s, 1, 1)
    heads = models.score_heads(s, 1, 3)
    for c in range(5):
        assert tails[c] == pytest.approx(score(s, 1, 1, c), abs=1e-12)
        assert heads[c] == pytest.approx(score(s, c, 1, 3), abs=1e-12)


def test_init_relations_deterministic_and_std():
    a = init_relations("transe", 1000, 1000, 0.01, seed=3)
    assert a.tobytes() == init_relations("transe", 1000, 1000, 0.01, seed=3).tobytes()
    assert abs(a.std() - 0.01) / 0.01 < 0.02


def test_init_relations_phases():
    R = init_relations("hake", 50, 8, 0.01, seed=0)
    assert R.shape == (50, 9)
    assert (R[:, :4] >= 0).all() and (R[:, :4] < 2 * np.pi).all()
    assert (R[:, -1] == 1.0).all()
    P = init_relations("rotate", 50, 8, seed=0)
    assert P.shape == (50, 4) and (P >= 0).all() and (P < 2 * np.pi).all()


def test_psi_must_be_positive():
    with pytest.raises(ConfigError):
        init_relations("transe", 2, 4, psi=0.0)


def test_wrong_relation_width():
    with pytest.raises(ValueError):
        ModelState("rotate", np.zeros((2, 4)), np.zeros((1, 4)))
    with pytest.raises(ValueError):
        ModelState("transe", np.zeros((2, 3)), np.zeros((1, 3)))


def test_checkpoint_roundtrip(tmp_path, small_kg, rng):
    ds, _ = small_kg
    s = state("hake", rng.normal(size=(ds.vocab.num_entities, 4)), rng.normal(size=(ds.vocab.num_relations, 5)))
    models.save_checkpoint(tmp_path, s, ds.vocab)
    back = models.load_checkpoint(tmp_path, ds.vocab)
    assert back.family == "hake" and back.R.shape == (ds.vocab.num_relations, 5)
    np.testing.assert_allclose(back.E, s.E, atol=1e-6)
    other = ds.vocab.copy()
    other.entities[0] = "renamed"
    with pytest.raises(ValueError):
        models.load_checkpoint(tmp_path, other)


def test_rotate_preserves_magnitude(rng):
    h = rng.normal(size=8)
    s = state("rotate", [h, np.zeros(8)], [rng.uniform(0, 2 * np.pi, size=4)])
    assert score(s, 0, 0, 1) == pytest.approx(-np.linalg.norm(h), rel=1e-12)
