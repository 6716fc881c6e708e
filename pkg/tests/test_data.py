import logging

import numpy as np
import pytest

from forcelab.data import (
    BOS,
    EOS,
    PAD,
    UNK,
    ConfigError,
    ParallelCorpus,
    Vocab,
    alphabet,
    build_vocab,
    gen_synthetic,
    load_parallel,
    make_batches,
    number_words,
    pad_batch,
    task_target,
)


def test_reserved_ids():
    v = Vocab()
    assert v.itos == ["<pad>", "<s>", "</s>", "<unk>"]
    assert (PAD, BOS, EOS, UNK) == (0, 1, 2, 3)


def test_build_vocab_frequency_then_lexicographic():
    v = build_vocab([["b", "a", "c"], ["c", "b"], ["c"]])
    assert v.itos[4:] == ["c", "b", "a"]
    assert v.encode(["a", "zz"]) == [6, UNK]
    v2 = build_vocab([["b", "a", "c"], ["c", "b"], ["c"]], max_size=5)
    assert v2.itos[4:] == ["c"]
    assert build_vocab([["x", "y", "y"]], min_count=2).itos[4:] == ["y"]


def test_decode_stops_at_eos():
    v = Vocab(["a", "b"])
    assert v.decode([BOS, 4, 5, EOS, 4]) == ["a", "b"]
    assert v.decode([4, PAD, 5]) == ["a", "b"]


def test_vocab_round_trip(tmp_path):
    v = build_vocab([["x", "y", "y"]])
    v.save(tmp_path / "v.txt")
    assert Vocab.load(tmp_path / "v.txt") == v
    (tmp_path / "bad.txt").write_text("a\nb\n")
    with pytest.raises(ConfigError):
        Vocab.load(tmp_path / "bad.txt")


def test_number_words_examples():
    assert number_words(0) == ["zero"]
    assert number_words(13) == ["thirteen"]
    assert number_words(40) == ["forty"]
    assert number_words(105) == ["one", "hundred", "five"]
    assert number_words(2_019) == ["two", "thousand", "nineteen"]
    assert number_words(1_000_001) == ["one", "million", "one"]


def test_task_targets():
    s = ["c", "a", "b"]
    assert task_target("copy", s) == s
    assert task_target("reverse", s) == ["b", "a", "c"]
    assert task_target("sort", s) == ["a", "b", "c"]
    assert task_target("num2word", ["4", "2"]) == ["forty", "two"]
    with pytest.raises(ConfigError):
        task_target("nope", s)


def test_alphabet_extends_beyond_letters():
    assert alphabet(3) == ["a", "b", "c"]
    assert alphabet(28)[-2:] == ["s26", "s27"]


@pytest.mark.parametrize("task", ["copy", "reverse", "sort", "num2word"])
def test_synthetic_splits_disjoint_and_deterministic(task):
    a = gen_synthetic(task, 200, seed=5, length_range=(2, 6), n_dev=30, n_test=30)
    b = gen_synthetic(task, 200, seed=5, length_range=(2, 6), n_dev=30, n_test=30)
    assert a.train.pairs == b.train.pairs and a.test.pairs == b.test.pairs
    srcs = [tuple(s) for split in (a.train, a.dev, a.test) for s in split.sources]
    assert len(srcs) == len(set(srcs)) == 260
    for s, t in a.train.pairs:
        assert 2 <= len(s) <= 6
        assert t == task_target(task, s)
    if task == "num2word":
        assert all(s[0] != "0" or len(s) == 1 for s in a.train.sources)


def test_synthetic_capacity_checked():
    with pytest.raises(ConfigError):
        gen_synthetic("copy", 100, 0, length_range=(1, 1), alphabet_size=5, n_dev=0, n_test=0)


def test_pad_batch_and_masks():
    b = pad_batch([[4, 5, 6], [7]], [[8], [9, 10]])
    np.testing.assert_array_equal(b.src, [[4, 5, 6], [7, 0, 0]])
    np.testing.assert_array_equal(b.tgt, [[8, EOS, 0], [9, 10, EOS]])
    np.testing.assert_array_equal(b.tgt_len, [2, 3])
    np.testing.assert_array_equal(b.src_mask, [[1, 1, 1], [1, 0, 0]])
    np.testing.assert_array_equal(b.tgt_mask, [[1, 1, 0], [1, 1, 1]])


def _corpus():
    splits = gen_synthetic("copy", 23, seed=1, length_range=(1, 8), alphabet_size=6, n_dev=0, n_test=0)
    vs = build_vocab(splits.train.sources)
    return splits.train, vs


def test_make_batches_covers_corpus_once():
    corpus, vs = _corpus()
    batches = make_batches(corpus, vs, vs, 5, seed=3)
    assert [b.size for b in batches] == [5, 5, 5, 5, 3]
    idx = np.concatenate([b.index for b in batches])
    assert sorted(idx.tolist()) == list(range(23))
    again = make_batches(corpus, vs, vs, 5, seed=3)
    assert all(np.array_equal(x.index, y.index) for x, y in zip(batches, again))
    assert not np.array_equal(idx, np.arange(23))
    ordered = make_batches(corpus, vs, vs, 5)
    assert np.concatenate([b.index for b in ordered]).tolist() == list(range(23))


def test_make_batches_sorted_buckets():
    corpus, vs = _corpus()
    for b in make_batches(corpus, vs, vs, 5, seed=0, sort_by_length=True):
        lens = b.src_len
        assert lens.max() - lens.min() <= 7
    batches = make_batches(corpus, vs, vs, 5, seed=0, sort_by_length=True)
    assert sorted(np.concatenate([b.index for b in batches]).tolist()) == list(range(23))


def test_make_batches_skips_long_pairs(caplog):
    corpus, vs = _corpus()
    n_long = sum(len(s) > 4 for s in corpus.sources)
    with caplog.at_level(logging.WARNING):
        batches = make_batches(corpus, vs, vs, 50, max_len=4)
    assert sum(b.size for b in batches) == 23 - n_long
    assert f"skipped {n_long}" in caplog.text


def test_parallel_round_trip_and_empty_lines(tmp_path):
    corpus = ParallelCorpus([(["a", "b"], ["b", "a"]), (["c"], ["c"])], "dev")
    corpus.save(tmp_path / "x")
    assert load_parallel(tmp_path / "x", "dev").pairs == corpus.pairs
    (tmp_path / "y.src").write_text("a\n\nb\n")
    (tmp_path / "y.tgt").write_text("a\nq\n\n")
    assert load_parallel(tmp_path / "y").pairs == [(["a"], ["a"])]
    (tmp_path / "z.src").write_text("a\n")
    (tmp_path / "z.tgt").write_text("a\nb\n")
    with pytest.raises(ConfigError):
        load_parallel(tmp_path / "z")
