"""Corpus BLEU, pairwise BLEU and mean step entropy.

BLEU follows the multi-bleu convention: whitespace tokens, case-sensitive,
one reference per sentence, clipped n-gram counts pooled over the corpus,
uniform weights over 1- to 4-grams, no smoothing.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from itertools import permutations
from typing import Iterable, Sequence

import numpy as np

from forcelab.autodiff import ContractError, DomainError, SIMPLEX_TOL

MAX_ORDER = 4


@dataclass(frozen=True)
class BleuReport:
    bleu: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    hyp_len: int
    ref_len: int

    def to_text(self) -> str:
        lines = [f"bleu: {self.bleu:.4f}"]
        lines += [f"p{n + 1}: {p:.6f}" for n, p in enumerate(self.precisions)]
        lines += [
            f"brevity_penalty: {self.brevity_penalty:.6f}",
            f"hyp_len: {self.hyp_len}",
            f"ref_len: {self.ref_len}",
        ]
        return "\n".join(lines) + "\n"

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["precisions"] = list(self.precisions)
        return rec


def _tokens(s) -> list[str]:
    return s.split() if isinstance(s, str) else list(s)


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(candidates: Sequence, references: Sequence) -> BleuReport:
    """Corpus-level BLEU on a 0-100 scale.

    Sentences may be token lists or whitespace-separated strings.
    """
    if len(candidates) != len(references):
        raise ContractError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise ContractError("BLEU of an empty corpus")
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        cand, ref = _tokens(cand), _tokens(ref)
        c_len += len(cand)
        r_len += len(ref)
        for n in range(1, MAX_ORDER + 1):
            cc = ngram_counts(cand, n)
            rc = ngram_counts(ref, n)
            matches[n - 1] += sum(min(k, rc[g]) for g, k in cc.items())
            totals[n - 1] += max(0, len(cand) - n + 1)
    precisions = tuple(m / t if t else 0.0 for m, t in zip(matches, totals))
    if c_len == 0:
        bp = 0.0
    elif c_len < r_len:
        bp = math.exp(1.0 - r_len / c_len)
    else:
        bp = 1.0
    if min(precisions) <= 0.0:
        bleu = 0.0
    else:
        bleu = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER)
    return BleuReport(min(bleu, 100.0), precisions, bp, c_len, r_len)


def pairwise_bleu(groups: Sequence[Sequence]) -> float:
    """Mean BLEU over all ordered pairs of distinct output groups.

    Each group holds one output per source sentence; lower is more diverse.
    """
    m = len(groups)
    if m < 2:
        raise ContractError("pairwise BLEU needs at least two groups")
    sizes = {len(g) for g in groups}
    if len(sizes) != 1:
        raise ContractError(f"groups are not aligned: sizes {sorted(sizes)}")
    scores = [corpus_bleu(groups[a], groups[b]).bleu for a, b in permutations(range(m), 2)]
    return float(sum(scores) / (m * (m - 1)))


def step_entropy(dist) -> float:
    """Natural-log entropy of one categorical distribution (0 ln 0 = 0)."""
    p = np.asarray(dist, dtype=np.float64)
    if p.ndim != 1 or np.any(p < -SIMPLEX_TOL) or abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise DomainError("entropy argument is not a distribution")
    nz = p[p > 0]
    return float(max(0.0, -(nz * np.log(nz)).sum()))


def step_entropies(probs: np.ndarray) -> np.ndarray:
    """Row-wise entropy for a ``[N, V]`` array of distributions."""
    p = np.asarray(probs, dtype=np.float64)
    logp = np.log(np.where(p > 0, p, 1.0))
    return np.maximum(0.0, -(p * logp).sum(axis=-1))


def mean_entropy(records: Iterable[Sequence[float]]) -> float:
    """Mean over every recorded step of every sentence."""
    flat = [float(e) for sent in records for e in sent]
    if not flat:
        raise ContractError("no entropy records")
    return float(sum(flat) / len(flat))
