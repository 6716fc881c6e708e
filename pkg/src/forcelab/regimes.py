"""Training losses: teacher forcing, free running, scheduled sampling and
attention forcing (vanilla and with automatic per-sequence selection).

Every loss is the mean over the batch of a per-sequence sum over target
steps; padded target steps are masked out.

Attention forcing uses two models. The frozen *teacher* runs with the
reference history and supplies the alignments; the *student* builds its
context vectors from those alignments while its recurrent state follows
either its own generated tokens (pass A) or the reference tokens (pass B).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from forcelab import autodiff as ad
from forcelab.autodiff import ContractError, Tensor
from forcelab.data import BOS, Batch, ConfigError
from forcelab.model import ModelParams, decoder_step, encode, init_decoder_state

MODES = ("TF", "FR", "SS", "VAF", "AAF")
SMOOTH_EPS = math.exp(-10)


def linear_decay(n_epochs: int) -> Callable[[int], float]:
    """Reference-token probability falling linearly from 1 to 0 over ``n_epochs``."""

    def schedule(epoch: int) -> float:
        if n_epochs <= 1:
            return 1.0 if epoch <= 0 else 0.0
        return float(min(1.0, max(0.0, 1.0 - epoch / (n_epochs - 1))))

    return schedule


@dataclass
class RegimeConfig:
    mode: str = "TF"
    gamma: float = 10.0
    k: float = 3.0
    eps_smooth: float = SMOOTH_EPS
    sample_history: bool = False
    ss_schedule: Callable[[int], float] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if not (self.k >= 0):  # also rejects NaN
            raise ConfigError("k must be >= 0 (or +inf)")
        if not 0 < self.eps_smooth < 1:
            raise ConfigError("eps_smooth must lie in (0, 1)")

    def ss_prob(self, epoch: int, n_epochs: int) -> float:
        sched = self.ss_schedule or linear_decay(n_epochs)
        p = float(sched(epoch))
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"scheduled sampling probability {p} outside [0, 1]")
        return p


@dataclass
class PassRecord:
    """Per-sequence loss terms of one forcing step."""

    nll: float
    att_kl: float
    chosen: str | None = None  # "A" or "B" for automatic attention forcing
    generated: list[int] = field(default_factory=list)
    kl_a: float | None = None
    kl_b: float | None = None


@dataclass
class Unrolled:
    logits: Tensor  # [B, T, V]
    alphas: Tensor  # model alignments [B, T, L]
    generated: np.ndarray  # argmax / sampled tokens [B, T]


def _dropout_rng(seed, stream: int) -> np.random.Generator | None:
    if seed is None:
        return None
    return np.random.default_rng([*np.atleast_1d(seed).tolist(), stream])


def unroll(
    params: ModelParams,
    batch: Batch,
    history: str,
    ref_alphas: np.ndarray | None = None,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    ss_prob: float = 1.0,
    ss_rng: np.random.Generator | None = None,
    sample_rng: np.random.Generator | None = None,
) -> Unrolled:
    """Run the decoder for exactly ``T_max`` steps of ``batch``.

    ``history`` selects the previous-token input: ``"reference"``,
    ``"generated"`` (the model's own previous output) or ``"mixed"``
    (reference with probability ``ss_prob`` per row and step).
    ``ref_alphas`` ``[B, T, L]`` replaces the model alignment when forming
    the context. Generated tokens are argmax unless ``sample_rng`` is given.
    """
    if batch.size == 0:
        raise ContractError("empty batch")
    enc = encode(params, batch.src, batch.src_mask, dropout, rng)
    state = init_decoder_state(params, enc)
    B, T = batch.tgt.shape
    prev = np.full(B, BOS, dtype=np.int64)
    logits, alphas, generated = [], [], []
    for t in range(T):
        ref = None if ref_alphas is None else ref_alphas[:, t, :]
        out = decoder_step(params, prev, state, enc, ref, dropout, rng)
        if sample_rng is not None:
            z = out.logits.data - out.logits.data.max(axis=-1, keepdims=True)
            cdf = np.cumsum(np.exp(z), axis=-1)
            u = sample_rng.random(B)[:, None] * cdf[:, -1:]
            gen = np.minimum((cdf <= u).sum(axis=-1), cdf.shape[-1] - 1)
        else:
            gen = out.logits.data.argmax(axis=-1)
        logits.append(out.logits)
        alphas.append(out.alpha)
        generated.append(gen)
        if history == "reference":
            prev = batch.tgt[:, t]
        elif history == "generated":
            prev = gen
        elif history == "mixed":
            use_ref = ss_rng.random(B) < ss_prob
            prev = np.where(use_ref, batch.tgt[:, t], gen)
        else:
            raise ValueError(f"unknown history {history!r}")
        state = out.state
    return Unrolled(ad.stack(logits, axis=1), ad.stack(alphas, axis=1), np.stack(generated, axis=1))


def sequence_nll(logits: Tensor, batch: Batch) -> Tensor:
    """Per-sequence sum of token cross-entropies against the reference, ``[B]``."""
    ce = ad.cross_entropy_from_logits(logits, batch.tgt)
    return ad.sum_(ce * Tensor(batch.tgt_mask.astype(np.float64)), axis=1)


def smooth_alignment(alpha, eps: float, mask=None):
    """Mix ``alpha`` with the uniform distribution over valid positions.

    Accepts numpy arrays or tensors of shape ``[..., L]``; ``mask`` marks
    valid positions (all by default). Padded positions stay exactly zero.
    """
    data = alpha.data if isinstance(alpha, Tensor) else np.asarray(alpha, dtype=np.float64)
    if mask is None:
        uniform = np.full(data.shape, 1.0 / data.shape[-1])
    else:
        m = np.broadcast_to(np.asarray(mask, dtype=np.float64), data.shape)
        uniform = m / m.sum(axis=-1, keepdims=True)
    if isinstance(alpha, Tensor):
        return alpha * (1.0 - eps) + Tensor(eps * uniform)
    ad.check_simplex(data, "alignment")
    return (1.0 - eps) * data + eps * uniform


def sequence_kl(ref_alphas: np.ndarray, alphas: Tensor, batch: Batch, eps: float) -> Tensor:
    """Per-sequence sum over steps of KL(smoothed ref || smoothed model), ``[B]``."""
    src_mask = batch.src_mask[:, None, :]
    p = smooth_alignment(ref_alphas, eps, src_mask)
    q = smooth_alignment(alphas, eps, src_mask)
    kl = ad.kl_categorical(Tensor(p), q)
    return ad.sum_(kl * Tensor(batch.tgt_mask.astype(np.float64)), axis=1)


def teacher_alignments(teacher: ModelParams, batch: Batch) -> np.ndarray:
    """Alignments of the frozen teacher under the reference history, ``[B, T, L]``."""
    with ad.no_grad():
        return unroll(teacher, batch, "reference").alphas.data.copy()


def _check_pair(student: ModelParams, teacher: ModelParams):
    s, t = student.config, teacher.config
    if (s.src_vocab, s.tgt_vocab) != (t.src_vocab, t.tgt_vocab):
        raise ConfigError(
            f"teacher vocabularies {(t.src_vocab, t.tgt_vocab)} do not match student {(s.src_vocab, s.tgt_vocab)}"
        )


# ---------------------------------------------------------------------------


def teacher_forcing_loss(params: ModelParams, batch: Batch, dropout: float = 0.0, dropout_seed=None) -> Tensor:
    out = unroll(params, batch, "reference", dropout=dropout, rng=_dropout_rng(dropout_seed, 0))
    return ad.mean(sequence_nll(out.logits, batch))


def free_running_loss(params: ModelParams, batch: Batch, dropout: float = 0.0, dropout_seed=None,
                      sample_rng: np.random.Generator | None = None) -> Tensor:
    out = unroll(params, batch, "generated", dropout=dropout, rng=_dropout_rng(dropout_seed, 0),
                 sample_rng=sample_rng)
    return ad.mean(sequence_nll(out.logits, batch))


def scheduled_sampling_loss(params: ModelParams, batch: Batch, eps_ss: float, rng: np.random.Generator,
                            dropout: float = 0.0, dropout_seed=None) -> Tensor:
    """History token is the reference with probability ``eps_ss``, else the model's own."""
    if not 0.0 <= eps_ss <= 1.0:
        raise ConfigError("eps_ss must be in [0, 1]")
    out = unroll(params, batch, "mixed", dropout=dropout, rng=_dropout_rng(dropout_seed, 0),
                 ss_prob=eps_ss, ss_rng=rng)
    return ad.mean(sequence_nll(out.logits, batch))


def _forced_pass(student, batch, history, ref, gamma, eps, dropout, dropout_seed, stream, sample_rng):
    out = unroll(student, batch, history, ref_alphas=ref, dropout=dropout,
                 rng=_dropout_rng(dropout_seed, stream), sample_rng=sample_rng)
    nll = sequence_nll(out.logits, batch)
    kl = sequence_kl(ref, out.alphas, batch, eps)
    return nll + kl * gamma, nll, kl, out.generated


def vanilla_af_losses(student: ModelParams, teacher: ModelParams, batch: Batch, gamma: float = 10.0,
                      eps_smooth: float = SMOOTH_EPS, dropout: float = 0.0, dropout_seed=None,
                      sample_rng: np.random.Generator | None = None,
                      ref_alphas: np.ndarray | None = None) -> tuple[Tensor, list[PassRecord]]:
    """Joint NLL + gamma * KL with generated history and teacher contexts."""
    _check_pair(student, teacher)
    ref = teacher_alignments(teacher, batch) if ref_alphas is None else ref_alphas
    joint, nll, kl, gen = _forced_pass(student, batch, "generated", ref, gamma, eps_smooth,
                                       dropout, dropout_seed, 1, sample_rng)
    records = [
        PassRecord(float(nll.data[b]), float(kl.data[b]), "A", gen[b, : batch.tgt_len[b]].tolist(),
                   kl_a=float(kl.data[b]))
        for b in range(batch.size)
    ]
    return ad.mean(joint), records


def select_pass_a(d_a, d_b, k: float) -> np.ndarray:
    """True where generated-history pass A is used: ``k * D_B > D_A``.

    Divergences are clamped at zero so rounding cannot flip the ``k = 0``
    case; ``k = +inf`` always selects A; exact ties go to pass B.
    """
    d_a = np.maximum(np.asarray(d_a, dtype=np.float64), 0.0)
    d_b = np.maximum(np.asarray(d_b, dtype=np.float64), 0.0)
    if k < 0 or math.isnan(k):
        raise ConfigError("k must be >= 0")
    if math.isinf(k):
        return np.ones(d_a.shape, dtype=bool)
    return k * d_b > d_a


def automatic_af_losses(student: ModelParams, teacher: ModelParams, batch: Batch, gamma: float = 10.0,
                        k: float = 3.0, eps_smooth: float = SMOOTH_EPS, dropout: float = 0.0,
                        dropout_seed=None, sample_rng: np.random.Generator | None = None,
                        ref_alphas: np.ndarray | None = None) -> tuple[Tensor, list[PassRecord]]:
    """Two student passes per sequence; keep A (generated history) or B (reference).

    Both passes only read the parameters, each with its own dropout stream,
    so their order does not matter.
    """
    if k < 0 or math.isnan(k):
        raise ConfigError("k must be >= 0")
    _check_pair(student, teacher)
    ref = teacher_alignments(teacher, batch) if ref_alphas is None else ref_alphas
    joint_a, nll_a, kl_a, gen = _forced_pass(student, batch, "generated", ref, gamma, eps_smooth,
                                             dropout, dropout_seed, 1, sample_rng)
    joint_b, nll_b, kl_b, _ = _forced_pass(student, batch, "reference", ref, gamma, eps_smooth,
                                           dropout, dropout_seed, 2, None)
    pick_a = select_pass_a(kl_a.data, kl_b.data, k)
    sel = Tensor(pick_a.astype(np.float64))
    loss = ad.mean(joint_a * sel + joint_b * Tensor((~pick_a).astype(np.float64)))
    records = []
    for b in range(batch.size):
        a = bool(pick_a[b])
        records.append(PassRecord(
            nll=float((nll_a if a else nll_b).data[b]),
            att_kl=float((kl_a if a else kl_b).data[b]),
            chosen="A" if a else "B",
            generated=gen[b, : batch.tgt_len[b]].tolist(),
            kl_a=float(kl_a.data[b]),
            kl_b=float(kl_b.data[b]),
        ))
    return loss, records
