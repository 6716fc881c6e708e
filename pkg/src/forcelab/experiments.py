"""Comparative runs over (regime, k, seed) cells with mean/std aggregation.

Each cell trains into its own directory and leaves a ``cell.json`` marker
when finished; rerunning a grid skips finished cells. Outputs in the grid
directory:

    cells.tsv / cells.jsonl   one row per cell
    summary.tsv               mean and sample std per (regime, k)
    fig_<metric>.tsv          plot-ready mean/std per group
"""

from __future__ import annotations

import csv
import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from forcelab.cli import cmd_train, translate_lines
from forcelab.config import RunConfig
from forcelab.data import gen_synthetic, load_parallel
from forcelab.metrics import corpus_bleu, mean_entropy, pairwise_bleu

log = logging.getLogger(__name__)

METRICS = ("bleu", "pairwise_bleu", "entropy", "pass_a_rate")


@dataclass(frozen=True)
class Cell:
    mode: str
    k: float | None
    seed: int

    @property
    def label(self) -> str:
        return self.mode if self.k is None else f"{self.mode}-k{_fmt_k(self.k)}"

    @property
    def dirname(self) -> str:
        return f"{self.label}_s{self.seed}"


def _fmt_k(k: float) -> str:
    return "inf" if math.isinf(k) else f"{k:g}"


@dataclass
class ExperimentGrid:
    cells: list[Cell]
    base: dict
    out_dir: str
    parallelism: int = 1
    eval_split: str = "dev"

    def run_config(self, cell: Cell) -> RunConfig:
        cfg = dict(self.base)
        cfg["mode"] = cell.mode
        cfg["seed"] = cell.seed
        if cell.k is not None:
            cfg["k"] = cell.k
        return RunConfig.from_dict(cfg).validate()

    @classmethod
    def load(cls, path) -> "ExperimentGrid":
        desc = json.loads(Path(path).read_text(encoding="utf-8"))
        cells = []
        for c in desc["cells"]:
            k = c.get("k")
            cells.append(Cell(c["mode"], None if k is None else float(k), int(c["seed"])))
        return cls(cells, desc.get("base", {}), desc["out_dir"], desc.get("parallelism", 1),
                   desc.get("eval_split", "dev"))


def default_grid(task: str, out_dir, seeds=(0, 1, 2), ks=(0.0, 2.5, 3.0, 3.5, math.inf),
                 epochs_pretrain: int = 15, epochs_force: int = 15, **base) -> ExperimentGrid:
    """TF baseline (all epochs TF), VAF, and AAF for each ``k``, over ``seeds``."""
    cells = []
    for s in seeds:
        cells.append(Cell("TF", None, s))
        cells.append(Cell("VAF", None, s))
        cells.extend(Cell("AAF", float(k), s) for k in ks)
    cfg = {"task": task, "epochs_pretrain": epochs_pretrain, "epochs_force": epochs_force}
    cfg.update(base)
    return ExperimentGrid(cells, cfg, str(out_dir))


def _eval_corpus(cfg: RunConfig, split: str):
    if cfg.train_prefix:
        prefix = cfg.dev_prefix if split == "dev" else None
        if prefix is None:
            raise ValueError(f"no {split} data configured")
        return load_parallel(prefix, split)
    splits = gen_synthetic(cfg.task, cfg.n_pairs, cfg.data_seed, (cfg.length_min, cfg.length_max),
                           cfg.alphabet_size, cfg.n_dev, cfg.n_test)
    return getattr(splits, split)


def run_cell(grid: ExperimentGrid, cell: Cell) -> dict:
    """Train and evaluate one cell; finished cells are read back from their marker."""
    cell_dir = Path(grid.out_dir) / cell.dirname
    marker = cell_dir / "cell.json"
    if marker.exists():
        return json.loads(marker.read_text(encoding="utf-8"))
    record = {"label": cell.label, "mode": cell.mode, "k": None if cell.k is None else _fmt_k(cell.k),
              "seed": cell.seed}
    try:
        cfg = grid.run_config(cell)
        trainer = cmd_train(cfg, cell_dir)
        corpus = _eval_corpus(cfg, grid.eval_split)
        params, vs, vt = trainer.params, trainer.vocab_src, trainer.vocab_tgt
        beam_out, ents = translate_lines(params, vs, vt, corpus.sources, beam_size=cfg.beam_size)
        groups = [translate_lines(params, vs, vt, corpus.sources, sample_seed=m)[0] for m in range(cfg.M)]
        forced = [r for r in trainer.history if r.pass_a_rate is not None]
        record.update(
            bleu=corpus_bleu(beam_out, corpus.targets).bleu,
            pairwise_bleu=pairwise_bleu(groups),
            entropy=mean_entropy(ents),
            pass_a_rate=float(np.mean([r.pass_a_rate for r in forced])) if forced else None,
            status="ok",
        )
        marker.write_text(json.dumps(record, sort_keys=True) + "\n", encoding="utf-8")
    except Exception as err:  # one broken cell must not stop the grid
        log.error("cell %s failed: %s", cell.dirname, err)
        record.update(status="failed", error=f"{type(err).__name__}: {err}", trace=traceback.format_exc())
    return record


def _run_cell_args(args):
    return run_cell(*args)


def aggregate(records: list[dict]) -> list[dict]:
    """Mean and sample standard deviation (ddof=1) per label; std is None for one seed."""
    groups: dict[str, list[dict]] = {}
    for r in records:
        if r.get("status") == "ok":
            groups.setdefault(r["label"], []).append(r)
    rows = []
    for label, recs in groups.items():
        row = {"label": label, "n": len(recs)}
        for m in METRICS:
            vals = [r[m] for r in recs if r.get(m) is not None]
            row[f"{m}_mean"] = float(np.mean(vals)) if vals else None
            row[f"{m}_std"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
        rows.append(row)
    return rows


@dataclass
class GridResult:
    records: list[dict]
    summary: list[dict]
    failed: list[dict] = field(default_factory=list)


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_tsv(path: Path, rows: list[dict], columns: list[str]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def run_grid(grid: ExperimentGrid) -> GridResult:
    out = Path(grid.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(grid, c) for c in grid.cells]
    if grid.parallelism > 1:
        with ProcessPoolExecutor(max_workers=grid.parallelism) as pool:
            records = list(pool.map(_run_cell_args, jobs))
    else:
        records = [run_cell(*j) for j in jobs]
    summary = aggregate(records)
    cell_cols = ["label", "mode", "k", "seed", "status", *METRICS]
    _write_tsv(out / "cells.tsv", records, cell_cols)
    with open(out / "cells.jsonl", "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({k: v for k, v in r.items() if k != "trace"}, sort_keys=True) + "\n")
    sum_cols = ["label", "n"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]
    _write_tsv(out / "summary.tsv", summary, sum_cols)
    for m in ("bleu", "pairwise_bleu", "entropy"):
        _write_tsv(out / f"fig_{m}.tsv",
                   [{"label": r["label"], "mean": r[f"{m}_mean"], "std": r[f"{m}_std"]} for r in summary],
                   ["label", "mean", "std"])
    failed = [r for r in records if r.get("status") != "ok"]
    return GridResult(records, summary, failed)
