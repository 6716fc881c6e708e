"""Vocabularies, parallel corpora, synthetic tasks and padded batches."""

from __future__ import annotations

import logging
import string
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")

TASKS = ("copy", "reverse", "sort", "num2word")


class ConfigError(ValueError):
    """Invalid configuration or incompatible inputs."""


class Vocab:
    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            if tok in self.stoi:
                raise ValueError(f"duplicate token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[: len(RESERVED)]) != RESERVED:
            raise ConfigError(f"{path}: reserved tokens missing or reordered")
        return cls(lines[len(RESERVED) :])


def build_vocab(sentences: Iterable[Sequence[str]], min_count: int = 1, max_size: int | None = None) -> Vocab:
    """Frequency-sorted vocabulary, ties broken lexicographically.

    ``max_size`` counts the reserved tokens.
    """
    counts = Counter(tok for sent in sentences for tok in sent)
    ranked = sorted(
        (t for t, n in counts.items() if n >= min_count and t not in RESERVED),
        key=lambda t: (-counts[t], t),
    )
    if max_size is not None:
        ranked = ranked[: max(0, max_size - len(RESERVED))]
    return Vocab(ranked)


@dataclass
class ParallelCorpus:
    pairs: list[tuple[list[str], list[str]]]
    split: str = "train"

    def __post_init__(self):
        if self.split not in ("train", "dev", "test"):
            raise ConfigError(f"unknown split {self.split!r}")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def sources(self) -> list[list[str]]:
        return [s for s, _ in self.pairs]

    @property
    def targets(self) -> list[list[str]]:
        return [t for _, t in self.pairs]

    def save(self, prefix) -> None:
        prefix = str(prefix)
        Path(prefix + ".src").write_text("".join(" ".join(s) + "\n" for s in self.sources), encoding="utf-8")
        Path(prefix + ".tgt").write_text("".join(" ".join(t) + "\n" for t in self.targets), encoding="utf-8")


def read_lines(path) -> list[list[str]]:
    text = Path(path).read_text(encoding="utf-8")
    return [line.split() for line in text.splitlines()]


def load_parallel(prefix, split: str = "train") -> ParallelCorpus:
    """Read ``<prefix>.src`` / ``<prefix>.tgt``; pairs with an empty side are dropped."""
    prefix = str(prefix)
    src = read_lines(prefix + ".src")
    tgt = read_lines(prefix + ".tgt")
    if len(src) != len(tgt):
        raise ConfigError(f"{prefix}: {len(src)} source lines but {len(tgt)} target lines")
    pairs = [(s, t) for s, t in zip(src, tgt) if s and t]
    if len(pairs) < len(src):
        log.warning("%s: dropped %d pairs with an empty side", prefix, len(src) - len(pairs))
    return ParallelCorpus(pairs, split)


# ---------------------------------------------------------------------------
# synthetic tasks

_ONES = "zero one two three four five six seven eight nine".split()
_TEENS = "ten eleven twelve thirteen fourteen fifteen sixteen seventeen eighteen nineteen".split()
_TENS = "_ _ twenty thirty forty fifty sixty seventy eighty ninety".split()
_SCALES = ["", "thousand", "million", "billion", "trillion"]


def _below_thousand(n: int) -> list[str]:
    words = []
    if n >= 100:
        words += [_ONES[n // 100], "hundred"]
        n %= 100
    if n >= 20:
        words.append(_TENS[n // 10])
        if n % 10:
            words.append(_ONES[n % 10])
    elif n >= 10:
        words.append(_TEENS[n - 10])
    elif n > 0:
        words.append(_ONES[n])
    return words


def number_words(n: int) -> list[str]:
    """English words for a non-negative integer below 10**15."""
    if n == 0:
        return ["zero"]
    if n >= 1000 ** len(_SCALES):
        raise ValueError("number too large")
    words: list[str] = []
    for scale in range(len(_SCALES) - 1, -1, -1):
        chunk = (n // 1000**scale) % 1000
        if chunk:
            words += _below_thousand(chunk)
            if _SCALES[scale]:
                words.append(_SCALES[scale])
    return words


def alphabet(size: int) -> list[str]:
    letters = list(string.ascii_lowercase)
    if size <= len(letters):
        return letters[:size]
    return letters + [f"s{i}" for i in range(len(letters), size)]


def task_target(task: str, source: list[str]) -> list[str]:
    if task == "copy":
        return list(source)
    if task == "reverse":
        return source[::-1]
    if task == "sort":
        return sorted(source)
    if task == "num2word":
        return number_words(int("".join(source)))
    raise ConfigError(f"unknown synthetic task {task!r}; choose from {TASKS}")


@dataclass
class CorpusSplits:
    train: ParallelCorpus
    dev: ParallelCorpus
    test: ParallelCorpus


def gen_synthetic(
    task: str,
    n_pairs: int,
    seed: int,
    length_range: tuple[int, int] = (3, 10),
    alphabet_size: int = 20,
    n_dev: int = 100,
    n_test: int = 100,
) -> CorpusSplits:
    """Generate a synthetic parallel corpus.

    Sources are distinct across all three splits. For ``num2word`` the
    length range counts digits and the alphabet is fixed to ``0-9``.
    """
    if task not in TASKS:
        raise ConfigError(f"unknown synthetic task {task!r}; choose from {TASKS}")
    lo, hi = length_range
    if not 1 <= lo <= hi:
        raise ConfigError(f"bad length range {length_range}")
    if task == "num2word":
        if hi > 15:
            raise ConfigError("num2word supports at most 15 digits")
        symbols = [str(d) for d in range(10)]
    else:
        symbols = alphabet(alphabet_size)
    total = n_pairs + n_dev + n_test
    capacity = sum(len(symbols) ** n for n in range(lo, hi + 1))
    if total > capacity:
        raise ConfigError(f"cannot draw {total} distinct sources from {capacity} possible")

    rng = np.random.default_rng(seed)
    seen: set[tuple[str, ...]] = set()
    sources: list[list[str]] = []
    while len(sources) < total:
        n = int(rng.integers(lo, hi + 1))
        idx = rng.integers(0, len(symbols), size=n)
        if task == "num2word" and n > 1 and idx[0] == 0:
            idx[0] = rng.integers(1, 10)
        src = tuple(symbols[i] for i in idx)
        if src in seen:
            continue
        seen.add(src)
        sources.append(list(src))
    pairs = [(s, task_target(task, s)) for s in sources]
    return CorpusSplits(
        train=ParallelCorpus(pairs[:n_pairs], "train"),
        dev=ParallelCorpus(pairs[n_pairs : n_pairs + n_dev], "dev"),
        test=ParallelCorpus(pairs[n_pairs + n_dev :], "test"),
    )


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    src: np.ndarray  # [B, L_max]
    tgt: np.ndarray  # [B, T_max]; each row ends with EOS then PAD
    src_len: np.ndarray
    tgt_len: np.ndarray  # includes EOS
    index: np.ndarray  # positions in the source corpus

    @property
    def src_mask(self) -> np.ndarray:
        return np.arange(self.src.shape[1])[None, :] < self.src_len[:, None]

    @property
    def tgt_mask(self) -> np.ndarray:
        return np.arange(self.tgt.shape[1])[None, :] < self.tgt_len[:, None]

    @property
    def size(self) -> int:
        return self.src.shape[0]

    def __len__(self) -> int:
        return self.size


def pad_batch(src_ids: list[list[int]], tgt_ids: list[list[int]], index=None) -> Batch:
    if not src_ids:
        raise ValueError("empty batch")
    tgt_ids = [list(t) + [EOS] for t in tgt_ids]
    src_len = np.array([len(s) for s in src_ids], dtype=np.int64)
    tgt_len = np.array([len(t) for t in tgt_ids], dtype=np.int64)
    src = np.full((len(src_ids), src_len.max()), PAD, dtype=np.int64)
    tgt = np.full((len(tgt_ids), tgt_len.max()), PAD, dtype=np.int64)
    for i, (s, t) in enumerate(zip(src_ids, tgt_ids)):
        src[i, : len(s)] = s
        tgt[i, : len(t)] = t
    if index is None:
        index = np.arange(len(src_ids))
    return Batch(src, tgt, src_len, tgt_len, np.asarray(index, dtype=np.int64))


def make_batches(
    corpus: ParallelCorpus,
    vocab_src: Vocab,
    vocab_tgt: Vocab,
    batch_size: int,
    seed: int | None = None,
    sort_by_length: bool = False,
    max_len: int | None = None,
) -> list[Batch]:
    """Split ``corpus`` into padded batches.

    With ``seed`` the order is shuffled deterministically; ``None`` keeps
    corpus order. ``sort_by_length`` buckets similar source lengths to cut
    padding (batches are still shuffled among themselves).
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    keep, skipped = [], 0
    for i, (s, t) in enumerate(corpus.pairs):
        if max_len is not None and (len(s) > max_len or len(t) > max_len):
            skipped += 1
            continue
        keep.append(i)
    if skipped:
        log.warning("skipped %d pairs longer than %d tokens", skipped, max_len)
    order = np.array(keep, dtype=np.int64)
    rng = np.random.default_rng(seed) if seed is not None else None
    if rng is not None:
        order = rng.permutation(order)
    if sort_by_length:
        order = np.array(sorted(order, key=lambda i: len(corpus.pairs[i][0])), dtype=np.int64)
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if sort_by_length and rng is not None:
        chunks = [chunks[j] for j in rng.permutation(len(chunks))]
    batches = []
    for chunk in chunks:
        src = [vocab_src.encode(corpus.pairs[i][0]) for i in chunk]
        tgt = [vocab_tgt.encode(corpus.pairs[i][1]) for i in chunk]
        batches.append(pad_batch(src, tgt, chunk))
    return batches
