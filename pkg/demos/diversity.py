"""
Output diversity: pairwise BLEU and entropy
===========================================

Sampling several outputs per source and scoring them against each other
gives pairwise BLEU; lower means more varied outputs. Mean per-step entropy
of a beam run measures how peaked the model is.
"""

from forcelab.data import build_vocab, gen_synthetic
from forcelab.decoding import beam_search
from forcelab.metrics import mean_entropy, pairwise_bleu
from forcelab.regimes import RegimeConfig
from forcelab.training import TrainConfig, Trainer
from forcelab.cli import translate_lines

splits = gen_synthetic("sort", 600, seed=2, length_range=(3, 7))
vs = build_vocab(splits.train.sources)
vt = build_vocab(splits.train.targets)

###############################################################################
# Track diversity while a model trains: early models are flat and varied.

trainer = Trainer(TrainConfig(regime=RegimeConfig("TF"), epochs_pretrain=18, seed=0), splits.train, vs, vt)
for stage in range(3):
    params = trainer.fit(stop_after=6)
    groups = [translate_lines(params, vs, vt, splits.dev.sources, sample_seed=m)[0] for m in range(5)]
    _, ents = translate_lines(params, vs, vt, splits.dev.sources, beam_size=3)
    print(f"after {trainer.epoch:2d} epochs: pairwise BLEU {pairwise_bleu(groups):6.2f}  "
          f"mean entropy {mean_entropy(ents):.3f}")

###############################################################################
# A single beam hypothesis keeps its per-step entropies.

h = beam_search(params, vs.encode(splits.dev.sources[0]), beam_size=3)
print(vt.decode(h.tokens), [round(e, 3) for e in h.entropies])
