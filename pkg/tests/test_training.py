import math

import numpy as np
import pytest

from forcelab.data import ConfigError, build_vocab, gen_synthetic
from forcelab.regimes import RegimeConfig
from forcelab.training import TrainConfig, Trainer, train


@pytest.fixture(scope="module")
def corpus():
    splits = gen_synthetic("copy", 24, seed=3, length_range=(2, 5), alphabet_size=6, n_dev=6, n_test=6)
    vs = build_vocab(splits.train.sources)
    vt = build_vocab(splits.train.targets)
    return splits, vs, vt


def small(mode="TF", pre=1, force=1, **kw):
    reg = RegimeConfig(mode, **{k: kw.pop(k) for k in ("k", "gamma") if k in kw})
    return TrainConfig(regime=reg, d_emb=6, d_hidden=6, batch_size=8, epochs_pretrain=pre,
                       epochs_force=force, seed=1, **kw)


def test_zero_epochs_returns_initial_params(corpus):
    splits, vs, vt = corpus
    tr = Trainer(small(pre=0, force=0), splits.train, vs, vt)
    init = tr.params.copy()
    params, history = train(splits.train, vs, vt, small(pre=0, force=0))
    assert history == []
    assert params.equal(init)


def test_forcing_without_teacher_is_config_error(corpus):
    splits, vs, vt = corpus
    for mode in ("VAF", "AAF"):
        with pytest.raises(ConfigError):
            Trainer(small(mode, pre=0, force=2), splits.train, vs, vt)


def test_phase_and_learning_rate():
    cfg = small("AAF", pre=2, force=2)
    assert [cfg.phase(e) for e in range(4)] == [("TF", 0.002), ("TF", 0.002), ("AAF", 0.001), ("AAF", 0.001)]
    assert small("TF", pre=2, force=2).phase(3) == ("TF", 0.002)


def test_seeded_runs_identical(corpus):
    splits, vs, vt = corpus
    a, ha = train(splits.train, vs, vt, small("SS"), dev=splits.dev)
    b, hb = train(splits.train, vs, vt, small("SS"), dev=splits.dev)
    assert a.equal(b)
    assert [r.to_json() for r in ha] == [r.to_json() for r in hb]


def test_aaf_infinite_k_matches_vaf(corpus):
    splits, vs, vt = corpus
    pv, hv = train(splits.train, vs, vt, small("VAF", force=2))
    pa, ha = train(splits.train, vs, vt, small("AAF", force=2, k=math.inf))
    assert pv.equal(pa)
    assert [r.nll for r in hv] == [r.nll for r in ha]
    assert all(r.pass_a_rate == 1.0 for r in ha[1:])


def test_teacher_frozen_during_forcing(corpus):
    splits, vs, vt = corpus
    tr = Trainer(small("AAF", pre=1, force=2, k=3.0), splits.train, vs, vt)
    tr.fit(stop_after=1)
    tr._ensure_teacher()
    snapshot = tr.teacher.arrays()
    tr.fit()
    for name, arr in snapshot.items():
        assert tr.teacher[name].data.tobytes() == arr.tobytes()
    assert not tr.params.equal(tr.teacher)


def test_history_records(corpus):
    splits, vs, vt = corpus
    _, hist = train(splits.train, vs, vt, small("AAF", pre=1, force=1, k=3.0), dev=splits.dev)
    assert [r.epoch for r in hist] == [1, 2]
    assert hist[0].att_kl is None and hist[0].pass_a_rate is None
    assert hist[1].att_kl >= 0 and 0 <= hist[1].pass_a_rate <= 1
    assert all(0 <= r.val_bleu <= 100 and np.isfinite(r.nll) for r in hist)


def test_supplied_teacher_allows_no_pretraining(corpus):
    splits, vs, vt = corpus
    teacher, _ = train(splits.train, vs, vt, small(pre=1, force=0))
    _, hist = train(splits.train, vs, vt, small("VAF", pre=0, force=1), teacher=teacher)
    assert hist[0].mode == "VAF" and hist[0].lr == 0.002
