import math
import random
from itertools import permutations

import numpy as np
import pytest

from forcelab.autodiff import ContractError, DomainError
from forcelab.data import read_lines
from forcelab.metrics import corpus_bleu, mean_entropy, pairwise_bleu, step_entropies, step_entropy

from conftest import FIXTURES

# frozen from sacrebleu (tokenize="none", smooth_method="none", force=True)
BLEU50 = dict(bleu=65.57276245331886,
              precisions=[88.1104033970276, 72.20902612826603, 59.56873315363882, 50.467289719626166],
              bp=0.9915433909924237, hyp_len=471, ref_len=475)
BLEU3 = dict(bleu=50.226837164276716, bp=0.8382234324229999, hyp_len=17, ref_len=20,
             precisions=[15 / 17 * 100, 10 / 14 * 100, 6 / 11 * 100, 3 / 8 * 100])


def _load(name):
    return read_lines(FIXTURES / f"{name}.hyp"), read_lines(FIXTURES / f"{name}.ref")


@pytest.mark.parametrize("name,oracle", [("bleu50", BLEU50), ("bleu3", BLEU3)])
def test_bleu_matches_frozen_oracle(name, oracle):
    hyp, ref = _load(name)
    rep = corpus_bleu(hyp, ref)
    assert abs(rep.bleu - oracle["bleu"]) <= 0.01
    assert rep.bleu == pytest.approx(oracle["bleu"], rel=1e-12)
    np.testing.assert_allclose([100 * p for p in rep.precisions], oracle["precisions"], rtol=1e-12)
    assert rep.brevity_penalty == pytest.approx(oracle["bp"], rel=1e-12)
    assert (rep.hyp_len, rep.ref_len) == (oracle["hyp_len"], oracle["ref_len"])


def test_bleu_matches_live_sacrebleu():
    sacrebleu = pytest.importorskip("sacrebleu")
    rng = random.Random(7)
    words = "a b c d e f g h".split()
    refs = [[rng.choice(words) for _ in range(rng.randint(4, 12))] for _ in range(40)]
    hyps = [[w if rng.random() < 0.8 else rng.choice(words) for w in r][: rng.randint(3, len(r))] for r in refs]
    ours = corpus_bleu(hyps, refs)
    theirs = sacrebleu.corpus_bleu([" ".join(h) for h in hyps], [[" ".join(r) for r in refs]],
                                   tokenize="none", smooth_method="none", force=True)
    assert ours.bleu == pytest.approx(theirs.score, abs=1e-9)


def test_bleu_identity_is_100():
    hyp, _ = _load("bleu50")
    assert corpus_bleu(hyp, hyp).bleu == pytest.approx(100.0, abs=1e-12)


def test_bleu_no_4gram_overlap_is_zero():
    rep = corpus_bleu(["a b c d e"], ["a b c x d e"])
    assert rep.precisions[3] == 0.0 and rep.bleu == 0.0


def test_bleu_invariant_to_sentence_permutation():
    hyp, ref = _load("bleu50")
    order = list(range(len(hyp)))
    random.Random(3).shuffle(order)
    a = corpus_bleu(hyp, ref).bleu
    b = corpus_bleu([hyp[i] for i in order], [ref[i] for i in order]).bleu
    assert a == pytest.approx(b, rel=1e-14)


def test_bleu_contracts():
    with pytest.raises(ContractError):
        corpus_bleu([["a"]], [["a"], ["b"]])
    with pytest.raises(ContractError):
        corpus_bleu([], [])
    assert corpus_bleu([[]], [["a", "b"]]).bleu == 0.0


def test_bleu_report_text():
    hyp, ref = _load("bleu3")
    text = corpus_bleu(hyp, ref).to_text()
    assert text.startswith("bleu: 50.2268\n") and "ref_len: 20" in text


def test_pairwise_identical_groups_is_100():
    hyp, _ = _load("bleu50")
    assert pairwise_bleu([hyp, hyp, hyp]) == pytest.approx(100.0)


def test_pairwise_two_groups_is_mean_of_both_directions():
    hyp, ref = _load("bleu50")
    expected = (corpus_bleu(hyp, ref).bleu + corpus_bleu(ref, hyp).bleu) / 2
    assert pairwise_bleu([hyp, ref]) == pytest.approx(expected, rel=1e-14)


def test_pairwise_three_groups_enumeration():
    hyp, ref = _load("bleu50")
    third = hyp[::-1]
    groups = [hyp, ref, third]
    expected = sum(corpus_bleu(groups[a], groups[b]).bleu for a, b in permutations(range(3), 2)) / 6
    assert pairwise_bleu(groups) == pytest.approx(expected, rel=1e-14)


def test_pairwise_drops_when_a_group_becomes_disjoint():
    hyp, _ = _load("bleu50")
    before = pairwise_bleu([hyp, hyp, hyp])
    disjoint = [["zz" + w for w in s] for s in hyp]
    after = pairwise_bleu([hyp, hyp, disjoint])
    assert after < before
    assert after == pytest.approx(100.0 / 3)


def test_pairwise_contracts():
    with pytest.raises(ContractError):
        pairwise_bleu([[["a"]]])
    with pytest.raises(ContractError):
        pairwise_bleu([[["a"]], [["a"], ["b"]]])


def test_entropy_examples():
    assert step_entropy([0, 1, 0]) == 0.0
    assert step_entropy([0.25] * 4) == pytest.approx(math.log(4), rel=1e-15)
    assert step_entropy([0.5, 0.25, 0.25]) == pytest.approx(1.5 * math.log(2), rel=1e-15)
    with pytest.raises(DomainError):
        step_entropy([0.5, 0.6])
    rows = np.array([[1.0, 0.0], [0.5, 0.5]])
    np.testing.assert_allclose(step_entropies(rows), [0.0, math.log(2)])


def test_mean_entropy_weights_every_step():
    assert mean_entropy([[0.0, 1.0], [2.0]]) == pytest.approx(1.0)
    with pytest.raises(ContractError):
        mean_entropy([[], []])
