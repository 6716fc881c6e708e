"""Epoch loop: teacher-forcing pretraining followed by a forcing phase."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from forcelab import autodiff as ad
from forcelab.data import ConfigError, ParallelCorpus, Vocab, make_batches
from forcelab.decoding import greedy_decode
from forcelab.metrics import corpus_bleu
from forcelab.model import ModelConfig, ModelParams, init_params
from forcelab.optim import Adam
from forcelab.regimes import (
    RegimeConfig,
    automatic_af_losses,
    free_running_loss,
    scheduled_sampling_loss,
    teacher_forcing_loss,
    vanilla_af_losses,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    regime: RegimeConfig = field(default_factory=RegimeConfig)
    d_emb: int = 64
    d_hidden: int = 64
    enc_layers: int = 1
    dec_layers: int = 1
    init_range: float = 0.1
    lr: float = 0.002
    clip_norm: float = 1.0
    batch_size: int = 50
    dropout: float = 0.2
    epochs_pretrain: int = 0
    epochs_force: int = 0
    seed: int = 0
    max_len: int | None = None
    sort_by_length: bool = False

    @property
    def total_epochs(self) -> int:
        return self.epochs_pretrain + self.epochs_force

    def model_config(self, vocab_src: Vocab, vocab_tgt: Vocab) -> ModelConfig:
        return ModelConfig(len(vocab_src), len(vocab_tgt), self.d_emb, self.d_hidden,
                           self.enc_layers, self.dec_layers, self.init_range)

    def phase(self, epoch: int) -> tuple[str, float]:
        """Training mode and learning rate used at 0-based ``epoch``."""
        if self.regime.mode == "TF" or epoch < self.epochs_pretrain:
            return "TF", self.lr
        return self.regime.mode, self.lr / 2 if self.epochs_pretrain > 0 else self.lr


@dataclass
class EpochRecord:
    epoch: int
    mode: str
    nll: float
    att_kl: float | None
    pass_a_rate: float | None
    val_bleu: float | None
    lr: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False)


def dev_bleu(params: ModelParams, corpus: ParallelCorpus, vocab_src: Vocab, vocab_tgt: Vocab,
             batch_size: int = 100) -> float:
    """Greedy free-running BLEU on ``corpus``."""
    hyps = translate_corpus(params, corpus.sources, vocab_src, vocab_tgt, batch_size)
    return corpus_bleu(hyps, corpus.targets).bleu


def translate_corpus(params: ModelParams, sources, vocab_src: Vocab, vocab_tgt: Vocab,
                     batch_size: int = 100) -> list[list[str]]:
    out: list[list[str]] = []
    for i in range(0, len(sources), batch_size):
        chunk = [vocab_src.encode(s) for s in sources[i : i + batch_size]]
        L = max(len(s) for s in chunk)
        src = np.zeros((len(chunk), L), dtype=np.int64)
        mask = np.zeros((len(chunk), L), dtype=bool)
        for r, s in enumerate(chunk):
            src[r, : len(s)] = s
            mask[r, : len(s)] = True
        for h in greedy_decode(params, src, src_mask=mask):
            out.append(vocab_tgt.decode(h.tokens))
    return out


class Trainer:
    """Owns parameters, optimiser state and the run RNG across epochs.

    ``epoch`` counts completed epochs, so a trainer rebuilt from a saved
    state continues exactly where it stopped.
    """

    def __init__(self, config: TrainConfig, train: ParallelCorpus, vocab_src: Vocab, vocab_tgt: Vocab,
                 dev: ParallelCorpus | None = None, params: ModelParams | None = None,
                 teacher: ModelParams | None = None):
        self.config = config
        self.train_corpus = train
        self.dev = dev
        self.vocab_src, self.vocab_tgt = vocab_src, vocab_tgt
        if config.regime.mode in ("VAF", "AAF") and config.epochs_force > 0:
            if teacher is None and config.epochs_pretrain == 0:
                raise ConfigError(f"{config.regime.mode} needs a teacher checkpoint or epochs_pretrain > 0")
        mcfg = config.model_config(vocab_src, vocab_tgt)
        self.params = params if params is not None else init_params(mcfg, config.seed)
        if self.params.config.tgt_vocab != len(vocab_tgt) or self.params.config.src_vocab != len(vocab_src):
            raise ConfigError("parameter vocabulary sizes do not match the vocabularies")
        self.teacher = teacher
        self.optimizer = Adam()
        self.rng = np.random.default_rng(config.seed)
        self.epoch = 0
        self.history: list[EpochRecord] = []

    def _ensure_teacher(self):
        if self.teacher is None:
            # freeze a copy of the pretrained model; the student starts from the same weights
            self.teacher = self.params.copy()
            log.info("teacher frozen after %d pretraining epochs", self.epoch)

    def _batch_loss(self, mode: str, batch, dropout_seed, epoch_in_phase: int, step_rng):
        cfg, reg = self.config, self.config.regime
        p = self.params
        if mode == "TF":
            return teacher_forcing_loss(p, batch, cfg.dropout, dropout_seed), None
        sample_rng = step_rng if reg.sample_history else None
        if mode == "FR":
            return free_running_loss(p, batch, cfg.dropout, dropout_seed, sample_rng), None
        if mode == "SS":
            eps = reg.ss_prob(epoch_in_phase, cfg.epochs_force)
            return scheduled_sampling_loss(p, batch, eps, step_rng, cfg.dropout, dropout_seed), None
        self._ensure_teacher()
        if mode == "VAF":
            return vanilla_af_losses(p, self.teacher, batch, reg.gamma, reg.eps_smooth, cfg.dropout,
                                     dropout_seed, sample_rng)
        return automatic_af_losses(p, self.teacher, batch, reg.gamma, reg.k, reg.eps_smooth, cfg.dropout,
                                   dropout_seed, sample_rng)

    def run_epoch(self) -> EpochRecord:
        cfg = self.config
        e = self.epoch
        mode, lr = cfg.phase(e)
        epoch_seed = int(self.rng.integers(2**63))
        batches = make_batches(self.train_corpus, self.vocab_src, self.vocab_tgt, cfg.batch_size,
                               seed=epoch_seed, sort_by_length=cfg.sort_by_length, max_len=cfg.max_len)
        step_rng = np.random.default_rng([epoch_seed, 1])
        nll_sum = kl_sum = 0.0
        n_seq = n_a = 0
        have_kl = False
        for bi, batch in enumerate(batches):
            with ad.Tape() as tape:
                loss, records = self._batch_loss(mode, batch, (epoch_seed, bi), e - cfg.epochs_pretrain, step_rng)
            grads = ad.backward(loss, tape)
            self.params = self.optimizer.step(self.params, {p.name: g for p, g in grads.items()}, lr, cfg.clip_norm)
            if records is None:
                nll_sum += loss.item() * batch.size
            else:
                have_kl = True
                nll_sum += sum(r.nll for r in records)
                kl_sum += sum(r.att_kl for r in records)
                n_a += sum(r.chosen == "A" for r in records)
            n_seq += batch.size
        n_seq = max(n_seq, 1)
        val = None
        if self.dev is not None and len(self.dev):
            val = dev_bleu(self.params, self.dev, self.vocab_src, self.vocab_tgt)
        rec = EpochRecord(
            epoch=e + 1, mode=mode, nll=nll_sum / n_seq,
            att_kl=kl_sum / n_seq if have_kl else None,
            pass_a_rate=n_a / n_seq if have_kl else None,
            val_bleu=val, lr=lr,
        )
        self.history.append(rec)
        self.epoch += 1
        log.info("epoch %d %s nll=%.4f val_bleu=%s", rec.epoch, mode, rec.nll,
                 "n/a" if val is None else f"{val:.2f}")
        return rec

    def fit(self, on_epoch_end: Callable[["Trainer", EpochRecord], None] | None = None,
            stop_after: int | None = None) -> ModelParams:
        """Train until every configured epoch is done (or ``stop_after`` more epochs)."""
        done = 0
        while self.epoch < self.config.total_epochs:
            if stop_after is not None and done >= stop_after:
                break
            if self.epoch == self.config.epochs_pretrain and self.config.regime.mode in ("VAF", "AAF"):
                self._ensure_teacher()
            rec = self.run_epoch()
            done += 1
            if on_epoch_end is not None:
                on_epoch_end(self, rec)
        return self.params


def train(train_corpus: ParallelCorpus, vocab_src: Vocab, vocab_tgt: Vocab, config: TrainConfig,
          dev: ParallelCorpus | None = None, teacher: ModelParams | None = None,
          params: ModelParams | None = None) -> tuple[ModelParams, list[EpochRecord]]:
    trainer = Trainer(config, train_corpus, vocab_src, vocab_tgt, dev, params, teacher)
    trainer.fit()
    return trainer.params, trainer.history
