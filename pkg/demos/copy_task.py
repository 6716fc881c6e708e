"""
Learning to copy with teacher forcing
=====================================

A small encoder-decoder is trained on the synthetic copy task and then run
in free-running mode. Takes about half a minute on one core.
"""

import numpy as np

from forcelab.data import build_vocab, gen_synthetic
from forcelab.decoding import greedy_decode
from forcelab.metrics import corpus_bleu
from forcelab.regimes import RegimeConfig
from forcelab.training import TrainConfig, translate_corpus, train

# 1000 training pairs over a 20-letter alphabet, lengths 3 to 10
splits = gen_synthetic("copy", 1000, seed=0)
vs = build_vocab(splits.train.sources)
vt = build_vocab(splits.train.targets)
print(splits.train.pairs[0])

###############################################################################
# Train with teacher forcing only. Dev BLEU is measured after each epoch.

config = TrainConfig(regime=RegimeConfig("TF"), epochs_pretrain=20, seed=0)
params, history = train(splits.train, vs, vt, config, dev=splits.dev)
for rec in history[::4]:
    print(f"epoch {rec.epoch:2d}  nll {rec.nll:7.3f}  dev BLEU {rec.val_bleu:6.2f}")

###############################################################################
# Free-running test-set BLEU, and a couple of outputs side by side.

hyps = translate_corpus(params, splits.test.sources, vs, vt)
print("test BLEU", round(corpus_bleu(hyps, splits.test.targets).bleu, 2))
for src, hyp in list(zip(splits.test.sources, hyps))[:3]:
    print(" ".join(src), "->", " ".join(hyp))

###############################################################################
# The attention of a copy model sits on the diagonal.

h = greedy_decode(params, vs.encode(splits.test.sources[0]), keep_alignments=True)[0]
print(np.round(np.array(h.alignments[:-1]), 2))
