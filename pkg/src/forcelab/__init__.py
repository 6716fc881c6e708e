"""Sequence-to-sequence training regimes on a small numpy autodiff engine.

Teacher forcing, free running, scheduled sampling and attention forcing
(vanilla and with automatic per-sequence selection), plus BLEU,
pairwise BLEU and entropy for comparing them.
"""

from forcelab.autodiff import Parameter, Tape, Tensor, backward, no_grad
from forcelab.data import (
    Batch,
    ParallelCorpus,
    Vocab,
    build_vocab,
    gen_synthetic,
    make_batches,
)
from forcelab.decoding import Hypothesis, beam_search, greedy_decode, sampling_search
from forcelab.metrics import corpus_bleu, mean_entropy, pairwise_bleu, step_entropy
from forcelab.model import ModelConfig, ModelParams, init_params
from forcelab.regimes import (
    RegimeConfig,
    automatic_af_losses,
    scheduled_sampling_loss,
    smooth_alignment,
    teacher_forcing_loss,
    vanilla_af_losses,
)
from forcelab.training import TrainConfig, Trainer, train

__version__ = "0.1.0"
