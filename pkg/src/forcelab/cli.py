"""Command-line entry point: ``forcelab {train,translate,evaluate,diversity,grid}``.

Logs go to standard error; data goes to files or standard output.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from forcelab.autodiff import ContractError, DomainError
from forcelab.checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from forcelab.config import RunConfig, load_run_config
from forcelab.data import ConfigError, ParallelCorpus, Vocab, build_vocab, gen_synthetic, load_parallel, read_lines
from forcelab.decoding import beam_search, greedy_decode, sample_decode
from forcelab.metrics import BleuReport, corpus_bleu, mean_entropy, pairwise_bleu
from forcelab.model import ModelParams
from forcelab.training import EpochRecord, Trainer

log = logging.getLogger("forcelab")


# ---------------------------------------------------------------------------
# train


def load_data(cfg: RunConfig, out_dir: Path | None = None) -> tuple[ParallelCorpus, ParallelCorpus | None]:
    if cfg.train_prefix:
        train = load_parallel(cfg.train_prefix, "train")
        dev = load_parallel(cfg.dev_prefix, "dev") if cfg.dev_prefix else None
        return train, dev
    splits = gen_synthetic(cfg.task, cfg.n_pairs, cfg.data_seed, (cfg.length_min, cfg.length_max),
                           cfg.alphabet_size, cfg.n_dev, cfg.n_test)
    if out_dir is not None:
        data_dir = out_dir / "data"
        data_dir.mkdir(parents=True, exist_ok=True)
        for split in (splits.train, splits.dev, splits.test):
            split.save(data_dir / split.split)
    return splits.train, splits.dev


def trainer_checkpoint(trainer: Trainer, cfg: RunConfig, with_teacher: bool = True) -> Checkpoint:
    return Checkpoint(
        model_config=trainer.params.config,
        vocab_src=trainer.vocab_src,
        vocab_tgt=trainer.vocab_tgt,
        params=trainer.params.arrays(),
        teacher=trainer.teacher.arrays() if (with_teacher and trainer.teacher is not None) else None,
        optimizer=trainer.optimizer.state_arrays(),
        adam_t=trainer.optimizer.t,
        epoch=trainer.epoch,
        rng_state=trainer.rng.bit_generator.state,
        run_config=cfg.to_dict(),
        history=[vars(r).copy() for r in trainer.history],
    )


def restore_trainer(trainer: Trainer, ckpt: Checkpoint) -> None:
    if ckpt.vocab_src != trainer.vocab_src or ckpt.vocab_tgt != trainer.vocab_tgt:
        raise ConfigError("checkpoint vocabularies do not match the training data")
    trainer.params = ckpt.model()
    trainer.teacher = ckpt.teacher_model()
    trainer.optimizer.load_arrays(ckpt.optimizer, ckpt.adam_t)
    trainer.rng.bit_generator.state = ckpt.rng_state
    trainer.epoch = ckpt.epoch
    trainer.history = [EpochRecord(**r) for r in ckpt.history]


def cmd_train(cfg: RunConfig, out_dir, resume: bool = False, stop_after: int | None = None) -> Trainer:
    """Train per ``cfg`` into ``out_dir``.

    Writes ``state.ckpt`` after every epoch (used by ``resume``),
    ``teacher.ckpt`` when pretraining ends in a forcing run,
    ``final.ckpt`` when all epochs are done, and ``train_log.jsonl``.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, dev = load_data(cfg, out_dir)
    vocab_src = build_vocab(train.sources)
    vocab_tgt = build_vocab(train.targets)
    vocab_src.save(out_dir / "vocab.src")
    vocab_tgt.save(out_dir / "vocab.tgt")

    teacher = None
    if cfg.teacher:
        tck = load_checkpoint(cfg.teacher)
        if tck.vocab_src != vocab_src or tck.vocab_tgt != vocab_tgt:
            raise ConfigError(f"teacher {cfg.teacher} was trained with different vocabularies")
        teacher = tck.model()
    tcfg = cfg.train_config()
    params = teacher.copy() if teacher is not None else None
    trainer = Trainer(tcfg, train, vocab_src, vocab_tgt, dev, params=params, teacher=teacher)
    state_path = out_dir / "state.ckpt"
    if resume:
        if not state_path.exists():
            raise ConfigError(f"nothing to resume in {out_dir}")
        restore_trainer(trainer, load_checkpoint(state_path))
        log.info("resumed at epoch %d", trainer.epoch)

    def write_log():
        text = "".join(r.to_json() + "\n" for r in trainer.history)
        (out_dir / "train_log.jsonl").write_text(text, encoding="utf-8")

    def on_epoch_end(tr: Trainer, rec: EpochRecord):
        write_log()
        save_checkpoint(state_path, trainer_checkpoint(tr, cfg))
        if (cfg.mode != "TF" and cfg.epochs_pretrain > 0 and tr.epoch == cfg.epochs_pretrain):
            save_checkpoint(out_dir / "teacher.ckpt", trainer_checkpoint(tr, cfg, with_teacher=False))

    trainer.fit(on_epoch_end, stop_after=stop_after)
    write_log()
    if trainer.epoch >= tcfg.total_epochs:
        save_checkpoint(out_dir / "final.ckpt", trainer_checkpoint(trainer, cfg))
    return trainer


# ---------------------------------------------------------------------------
# translate / evaluate / diversity


def _pad(ids_list: list[list[int]]):
    L = max(len(s) for s in ids_list)
    src = np.zeros((len(ids_list), L), dtype=np.int64)
    mask = np.zeros((len(ids_list), L), dtype=bool)
    for r, s in enumerate(ids_list):
        src[r, : len(s)] = s
        mask[r, : len(s)] = True
    return src, mask


def translate_lines(params: ModelParams, vocab_src: Vocab, vocab_tgt: Vocab, lines: list[list[str]],
                    beam_size: int = 1, sample_seed: int | None = None, max_len: int | None = None,
                    batch_size: int = 100):
    """Translate tokenised lines; returns ``(outputs, entropies)`` per line.

    Empty input lines yield empty outputs.
    """
    outputs: list[list[str]] = [[] for _ in lines]
    entropies: list[list[float]] = [[] for _ in lines]
    todo = [i for i, toks in enumerate(lines) if toks]
    rng = np.random.default_rng(sample_seed) if sample_seed is not None else None
    if rng is None and beam_size > 1:
        for i in todo:
            h = beam_search(params, vocab_src.encode(lines[i]), beam_size, max_len)
            outputs[i], entropies[i] = vocab_tgt.decode(h.tokens), h.entropies
        return outputs, entropies
    for start in range(0, len(todo), batch_size):
        chunk = todo[start : start + batch_size]
        src, mask = _pad([vocab_src.encode(lines[i]) for i in chunk])
        if rng is None:
            hyps = greedy_decode(params, src, max_len, src_mask=mask)
        else:
            hyps = sample_decode(params, src, rng, max_len, src_mask=mask)
        for i, h in zip(chunk, hyps):
            outputs[i], entropies[i] = vocab_tgt.decode(h.tokens), h.entropies
    return outputs, entropies


def _check_vocab(ckpt: Checkpoint, vocab_src_path, vocab_tgt_path):
    for path, vocab, side in ((vocab_src_path, ckpt.vocab_src, "source"), (vocab_tgt_path, ckpt.vocab_tgt, "target")):
        if path is not None and Vocab.load(path) != vocab:
            raise ConfigError(f"{side} vocabulary {path} does not match the checkpoint")


def _write_lines(path, rows: list[list[str]]):
    Path(path).write_text("".join(" ".join(r) + "\n" for r in rows), encoding="utf-8")


def cmd_translate(checkpoint, input_path, output_path, beam_size: int = 1, sample_seed: int | None = None,
                  entropy_path=None, max_len: int | None = None, vocab_src=None, vocab_tgt=None) -> None:
    ckpt = load_checkpoint(checkpoint)
    _check_vocab(ckpt, vocab_src, vocab_tgt)
    lines = read_lines(input_path)
    outs, ents = translate_lines(ckpt.model(), ckpt.vocab_src, ckpt.vocab_tgt, lines, beam_size,
                                 sample_seed, max_len)
    _write_lines(output_path, outs)
    if entropy_path is not None:
        _write_lines(entropy_path, [[repr(float(e)) for e in row] for row in ents])


def cmd_evaluate(hyp_path, ref_path, record_path=None, out=None) -> BleuReport:
    hyps = read_lines(hyp_path)
    refs = read_lines(ref_path)
    if len(hyps) != len(refs):
        raise ContractError(f"{hyp_path} has {len(hyps)} lines but {ref_path} has {len(refs)}")
    report = corpus_bleu(hyps, refs)
    (out or sys.stdout).write(report.to_text())
    if record_path is not None:
        with open(record_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(report.to_record()) + "\n")
    return report


def cmd_diversity(checkpoint, input_path, out_dir, M: int | None = None, seeds=None, beam_size: int | None = None,
                  max_len: int | None = None) -> dict:
    """Pairwise BLEU over M sampled outputs plus mean entropy from one beam run."""
    ckpt = load_checkpoint(checkpoint)
    run = ckpt.run_config or {}
    M = M if M is not None else int(run.get("M", 5))
    beam_size = beam_size if beam_size is not None else int(run.get("beam_size", 1))
    seeds = list(seeds) if seeds is not None else list(range(M))
    if M < 2:
        raise ConfigError("M must be >= 2")
    if len(seeds) != M:
        raise ConfigError(f"need {M} seeds, got {len(seeds)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = ckpt.model()
    lines = read_lines(input_path)
    groups = []
    for m, seed in enumerate(seeds):
        outs, _ = translate_lines(params, ckpt.vocab_src, ckpt.vocab_tgt, lines, sample_seed=seed, max_len=max_len)
        _write_lines(out_dir / f"sample_{m}.txt", outs)
        groups.append(outs)
    beam_outs, ents = translate_lines(params, ckpt.vocab_src, ckpt.vocab_tgt, lines, beam_size=beam_size,
                                      max_len=max_len)
    _write_lines(out_dir / "beam.txt", beam_outs)
    _write_lines(out_dir / "beam.entropy", [[repr(float(e)) for e in row] for row in ents])
    report = {
        "M": M,
        "seeds": seeds,
        "pairwise_bleu": pairwise_bleu(groups),
        "mean_entropy": mean_entropy(ents),
        "beam_size": beam_size,
        "n_sentences": len(lines),
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
    (out_dir / "report.txt").write_text("".join(f"{k}: {v}\n" for k, v in report.items()), encoding="utf-8")
    return report


# ---------------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser):
    group = p.add_argument_group("run configuration (overrides the config file)")
    for f in fields(RunConfig):
        group.add_argument("--" + f.name.replace("_", "-"), dest="cfg_" + f.name, default=None, metavar="V")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forcelab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", action="store_true", help="continue from <out>/state.ckpt")
    p.add_argument("--stop-after", type=int, default=None, help="stop after this many epochs (for testing resume)")
    _add_config_flags(p)

    p = sub.add_parser("translate", help="translate a file in free-running mode")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--beam-size", type=int, default=1)
    p.add_argument("--sample-seed", type=int, default=None)
    p.add_argument("--entropy-file", default=None)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("--vocab-src", default=None)
    p.add_argument("--vocab-tgt", default=None)

    p = sub.add_parser("evaluate", help="corpus BLEU of a hypothesis file")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--record", default=None, help="append a JSON record here")

    p = sub.add_parser("diversity", help="pairwise BLEU and mean entropy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--M", type=int, default=None)
    p.add_argument("--seeds", type=int, nargs="+", default=None)
    p.add_argument("--beam-size", type=int, default=None)
    p.add_argument("--max-len", type=int, default=None)

    p = sub.add_parser("grid", help="run an experiment grid")
    p.add_argument("grid", help="JSON grid description")
    p.add_argument("--parallel", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
            cfg = load_run_config(args.config, overrides)
            cmd_train(cfg, args.out, resume=args.resume, stop_after=args.stop_after)
        elif args.command == "translate":
            cmd_translate(args.checkpoint, args.input, args.output, args.beam_size, args.sample_seed,
                          args.entropy_file, args.max_len, args.vocab_src, args.vocab_tgt)
        elif args.command == "evaluate":
            cmd_evaluate(args.hyp, args.ref, args.record)
        elif args.command == "diversity":
            report = cmd_diversity(args.checkpoint, args.input, args.out, args.M, args.seeds, args.beam_size,
                                   args.max_len)
            sys.stdout.write("".join(f"{k}: {v}\n" for k, v in report.items()))
        elif args.command == "grid":
            from forcelab.experiments import ExperimentGrid, run_grid

            grid = ExperimentGrid.load(args.grid)
            if args.parallel is not None:
                grid.parallelism = args.parallel
            result = run_grid(grid)
            return 1 if result.failed else 0
    except (ConfigError, CheckpointError, ContractError, DomainError, OSError, KeyError) as err:
        print(f"forcelab: error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
