"""Self-describing binary checkpoints.

Layout (all integers little-endian)::

    magic        8 bytes  b"FLCKPT\\x00\\x00"
    version      u32
    meta_len     u64, then meta_len bytes of UTF-8 JSON (configs, vocabularies,
                 counters, RNG state, training history)
    n_tensors    u32
    per tensor:  name_len u32, name (UTF-8), rank u32, dims u64 * rank,
                 values float64 * prod(dims), row-major

Tensor names are prefixed by role: ``param/``, ``teacher/``, ``adam.m/``,
``adam.v/``.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from forcelab.data import Vocab
from forcelab.model import ModelConfig, ModelParams

MAGIC = b"FLCKPT\x00\x00"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_config: ModelConfig
    vocab_src: Vocab
    vocab_tgt: Vocab
    params: dict[str, np.ndarray]
    teacher: dict[str, np.ndarray] | None = None
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: int = 0
    epoch: int = 0
    rng_state: dict | None = None
    run_config: dict = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)
    version: int = FORMAT_VERSION

    def model(self) -> ModelParams:
        return ModelParams(self.model_config, self.params)

    def teacher_model(self) -> ModelParams | None:
        return None if self.teacher is None else ModelParams(self.model_config, self.teacher)


def _tensors(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    out = {f"param/{n}": a for n, a in ckpt.params.items()}
    if ckpt.teacher is not None:
        out.update({f"teacher/{n}": a for n, a in ckpt.teacher.items()})
    out.update(ckpt.optimizer)
    return out


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    meta = {
        "model_config": ckpt.model_config.to_dict(),
        "vocab_src": ckpt.vocab_src.itos,
        "vocab_tgt": ckpt.vocab_tgt.itos,
        "adam_t": ckpt.adam_t,
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "run_config": ckpt.run_config,
        "history": ckpt.history,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", ckpt.version, len(meta_bytes)), meta_bytes]
    tensors = _tensors(ckpt)
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}Q", arr.ndim, *arr.shape))
        parts.append(arr.tobytes(order="C"))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, meta_len = r.unpack("<IQ")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    (n,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}Q") if rank else ()
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(dims)
        tensors[name] = arr
    if r.pos != len(r.buf):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")

    def group(prefix):
        return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}

    vs, vt = Vocab(), Vocab()
    vs.itos, vt.itos = list(meta["vocab_src"]), list(meta["vocab_tgt"])
    vs.stoi = {t: i for i, t in enumerate(vs.itos)}
    vt.stoi = {t: i for i, t in enumerate(vt.itos)}
    teacher = group("teacher/") or None
    optimizer = {k: v for k, v in tensors.items() if k.startswith("adam.")}
    return Checkpoint(
        model_config=ModelConfig(**meta["model_config"]),
        vocab_src=vs, vocab_tgt=vt,
        params=group("param/"), teacher=teacher, optimizer=optimizer,
        adam_t=meta["adam_t"], epoch=meta["epoch"], rng_state=meta["rng_state"],
        run_config=meta["run_config"], history=meta["history"], version=version,
    )
