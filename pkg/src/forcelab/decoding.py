"""Free-running generation: greedy, beam and ancestral sampling.

The model's own alignment drives the context at every step. All search
runs without a tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from forcelab import autodiff as ad
from forcelab.data import BOS, EOS
from forcelab.metrics import step_entropies
from forcelab.model import DecoderState, ModelParams, decoder_step, encode, init_decoder_state


@dataclass
class Hypothesis:
    tokens: list[int]
    logprob: float = 0.0
    finished: bool = False
    entropies: list[float] = field(default_factory=list)
    alignments: list[np.ndarray] = field(default_factory=list, repr=False)


def default_max_len(src_len: int) -> int:
    return 2 * int(src_len) + 10


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _run(params: ModelParams, src, src_mask, max_len, choose, keep_alignments=False) -> list[Hypothesis]:
    """Shared batched free-running loop; ``choose(logp) -> ids`` picks tokens."""
    with ad.no_grad():
        enc = encode(params, src, src_mask)
        state = init_decoder_state(params, enc)
        B = enc.states.shape[0]
        hyps = [Hypothesis([]) for _ in range(B)]
        prev = np.full(B, BOS, dtype=np.int64)
        alive = np.ones(B, dtype=bool)
        for _ in range(max_len):
            out = decoder_step(params, prev, state, enc)
            logp = _log_softmax(out.logits.data)
            ent = step_entropies(np.exp(logp))
            ids = choose(logp)
            for b in np.flatnonzero(alive):
                tok = int(ids[b])
                h = hyps[b]
                h.tokens.append(tok)
                h.logprob += float(logp[b, tok])
                h.entropies.append(float(ent[b]))
                if keep_alignments:
                    h.alignments.append(out.alpha.data[b, : enc.lengths[b]].copy())
                if tok == EOS:
                    h.finished = True
                    alive[b] = False
            if not alive.any():
                break
            prev = ids
            state = out.state
    return hyps


def _prepare(source):
    src = np.asarray(source, dtype=np.int64)
    if src.ndim == 1:
        src = src[None, :]
        mask = np.ones(src.shape, dtype=bool)
    else:
        mask = src != 0
    return src, mask


def greedy_decode(params: ModelParams, source, max_len: int | None = None, src_mask=None,
                  keep_alignments: bool = False) -> list[Hypothesis]:
    """Greedy search for a batch (``[B, L]`` padded with 0) or one sequence."""
    src, mask = _prepare(source)
    if src_mask is not None:
        mask = np.asarray(src_mask, dtype=bool).reshape(src.shape)
    if max_len is None:
        max_len = default_max_len(mask.sum(axis=1).max())
    return _run(params, src, mask, max_len, lambda logp: logp.argmax(axis=-1), keep_alignments)


def sample_decode(params: ModelParams, source, rng: np.random.Generator, max_len: int | None = None,
                  src_mask=None) -> list[Hypothesis]:
    """Ancestral sampling for a batch; one uniform draw per row per step."""
    src, mask = _prepare(source)
    if src_mask is not None:
        mask = np.asarray(src_mask, dtype=bool).reshape(src.shape)
    if max_len is None:
        max_len = default_max_len(mask.sum(axis=1).max())

    def choose(logp):
        cdf = np.cumsum(np.exp(logp), axis=-1)
        u = rng.random(logp.shape[0])[:, None] * cdf[:, -1:]
        return np.minimum((cdf <= u).sum(axis=-1), logp.shape[-1] - 1)

    return _run(params, src, mask, max_len, choose)


def sampling_search(params: ModelParams, source, seed: int, max_len: int | None = None) -> Hypothesis:
    """Sample one output for one source sequence, deterministic per seed."""
    return sample_decode(params, np.asarray(source)[None, :], np.random.default_rng(seed), max_len)[0]


def _slice_state(state: DecoderState, rows) -> DecoderState:
    return DecoderState(
        h=[ad.Tensor(h.data[rows]) for h in state.h],
        c=[ad.Tensor(c.data[rows]) for c in state.c],
        step=state.step,
    )


def beam_search(params: ModelParams, source, beam_size: int = 1, max_len: int | None = None,
                length_norm: bool = False) -> Hypothesis:
    """Beam search over summed log-probabilities for one source sequence.

    Finished hypotheses keep their slot in the beam; the search stops once
    no live hypothesis can beat the best finished one, or at ``max_len``
    (live hypotheses are then returned unfinished). The greedy path is
    always a candidate, so the result never scores below greedy.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    src = np.asarray(source, dtype=np.int64).reshape(-1)
    if max_len is None:
        max_len = default_max_len(len(src))
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    greedy = greedy_decode(params, src, max_len)[0]
    if beam_size == 1:
        return greedy

    def score(h: Hypothesis) -> float:
        return h.logprob / max(1, len(h.tokens)) if length_norm else h.logprob

    with ad.no_grad():
        enc1 = encode(params, src[None, :])
        state = init_decoder_state(params, enc1)
        alive = [Hypothesis([])]
        finished: list[Hypothesis] = []
        for step in range(max_len):
            n = len(alive)
            enc = enc1 if n == 1 else type(enc1)(
                states=ad.Tensor(np.repeat(enc1.states.data, n, axis=0)),
                mask=np.repeat(enc1.mask, n, axis=0),
                lengths=np.repeat(enc1.lengths, n),
                final=ad.Tensor(np.repeat(enc1.final.data, n, axis=0)),
            )
            prev = np.array([h.tokens[-1] if h.tokens else BOS for h in alive], dtype=np.int64)
            out = decoder_step(params, prev, state, enc)
            logp = _log_softmax(out.logits.data)
            ent = step_entropies(np.exp(logp))
            V = logp.shape[-1]
            flat = (np.array([h.logprob for h in alive])[:, None] + logp).reshape(-1)
            # score descending, ties by (row, token) ascending
            order = np.lexsort((np.arange(flat.size), -flat))[:beam_size]
            next_alive, rows = [], []
            for k in order:
                r, tok = divmod(int(k), V)
                parent = alive[r]
                h = Hypothesis(
                    parent.tokens + [tok], float(flat[k]), tok == EOS,
                    parent.entropies + [float(ent[r])],
                )
                if h.finished:
                    finished.append(h)
                else:
                    next_alive.append(h)
                    rows.append(r)
            if not next_alive:
                break
            if step == max_len - 1:
                finished.extend(next_alive)
                break
            best_done = max((h.logprob for h in finished), default=-np.inf)
            if not length_norm and best_done >= next_alive[0].logprob:
                break
            alive = next_alive
            state = _slice_state(out.state, np.array(rows))
    # max() keeps the first of equal scores, so beam results win ties
    return max(finished + [greedy], key=score)
