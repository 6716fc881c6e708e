"""
Automatic attention forcing on string reversal
==============================================

A teacher-forced model is pretrained, frozen, and used as the teacher for a
student that trains on its own generated history. Each sequence picks the
generated-history pass (A) or the reference-history pass (B) depending on
how far its attention drifts from the teacher's. A larger ``k`` picks A
more often.
"""

import math

import numpy as np

from forcelab.data import build_vocab, gen_synthetic, make_batches
from forcelab.decoding import greedy_decode
from forcelab.regimes import RegimeConfig, automatic_af_losses
from forcelab.training import TrainConfig, Trainer

splits = gen_synthetic("reverse", 1000, seed=1)
vs = build_vocab(splits.train.sources)
vt = build_vocab(splits.train.targets)

###############################################################################
# Ten epochs of teacher forcing, then five of automatic attention forcing.

trainer = Trainer(TrainConfig(regime=RegimeConfig("AAF", k=3.0), epochs_pretrain=10, epochs_force=5, seed=0),
                  splits.train, vs, vt, dev=splits.dev)
trainer.fit()
for rec in trainer.history:
    rate = "" if rec.pass_a_rate is None else f"  pass A {rec.pass_a_rate:.2f}  KL {rec.att_kl:.3f}"
    print(f"epoch {rec.epoch:2d} {rec.mode:3s} lr {rec.lr:.4f} dev BLEU {rec.val_bleu:6.2f}{rate}")

###############################################################################
# Reversal needs attention running against the source order.

src = splits.dev.sources[0]
h = greedy_decode(trainer.params, vs.encode(src), keep_alignments=True)[0]
print(" ".join(src), "->", " ".join(vt.decode(h.tokens)))
print(np.round(np.array(h.alignments[: len(src)]), 2))

###############################################################################
# Selection rate against k, for the trained student and teacher.

batch = make_batches(splits.dev, vs, vt, 100)[0]
for k in (0.0, 1.0, 3.0, 10.0, math.inf):
    _, recs = automatic_af_losses(trainer.params, trainer.teacher, batch, k=k)
    print(f"k={k:>4}: pass A on {np.mean([r.chosen == 'A' for r in recs]):.0%}")
