"""Run configuration: a JSON file plus command-line overrides (overrides win)."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from forcelab.data import TASKS, ConfigError
from forcelab.regimes import MODES, SMOOTH_EPS, RegimeConfig
from forcelab.training import TrainConfig


@dataclass
class RunConfig:
    # data: either a synthetic task or <prefix>.src/.tgt files
    task: str | None = "copy"
    n_pairs: int = 1000
    n_dev: int = 100
    n_test: int = 100
    length_min: int = 3
    length_max: int = 10
    alphabet_size: int = 20
    data_seed: int = 0
    train_prefix: str | None = None
    dev_prefix: str | None = None
    # architecture
    d_emb: int = 64
    d_hidden: int = 64
    enc_layers: int = 1
    dec_layers: int = 1
    init_range: float = 0.1
    # regime
    mode: str = "TF"
    gamma: float = 10.0
    k: float = 3.0
    eps_smooth: float = SMOOTH_EPS
    sample_history: bool = False
    teacher: str | None = None
    # optimisation
    lr: float = 0.002
    clip_norm: float = 1.0
    epochs_pretrain: int = 0
    epochs_force: int = 0
    batch_size: int = 50
    dropout: float = 0.2
    seed: int = 0
    max_len: int | None = None
    sort_by_length: bool = False
    # inference / diversity
    beam_size: int = 1
    M: int = 5

    def validate(self) -> "RunConfig":
        if self.task is None and self.train_prefix is None:
            raise ConfigError("set either task or train_prefix")
        if self.task is not None and self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {MODES}")
        for name in ("n_pairs", "batch_size", "d_emb", "d_hidden", "enc_layers", "dec_layers", "beam_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs_pretrain < 0 or self.epochs_force < 0:
            raise ConfigError("epoch counts must be >= 0")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        if self.M < 2:
            raise ConfigError("M must be >= 2")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        self.regime()  # gamma / k / eps checks
        if (self.mode in ("VAF", "AAF") and self.epochs_force > 0
                and self.epochs_pretrain == 0 and not self.teacher):
            raise ConfigError(f"mode {self.mode} needs a teacher checkpoint or epochs_pretrain > 0")
        return self

    def regime(self) -> RegimeConfig:
        return RegimeConfig(self.mode, self.gamma, self.k, self.eps_smooth, self.sample_history)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            regime=self.regime(), d_emb=self.d_emb, d_hidden=self.d_hidden,
            enc_layers=self.enc_layers, dec_layers=self.dec_layers, init_range=self.init_range,
            lr=self.lr, clip_norm=self.clip_norm, batch_size=self.batch_size, dropout=self.dropout,
            epochs_pretrain=self.epochs_pretrain, epochs_force=self.epochs_force, seed=self.seed,
            max_len=self.max_len, sort_by_length=self.sort_by_length,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(d["k"]):
            d["k"] = "inf"
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**{k: coerce(known[k], v) for k, v in data.items()})


def _base_type(f) -> str:
    t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    return t.replace(" | None", "").strip()


def coerce(f, value):
    """Convert a JSON or command-line value to the field's type."""
    t = _base_type(f)
    optional = "None" in str(f.type)
    if value is None or (optional and isinstance(value, str) and value.lower() in ("none", "null")):
        if not optional:
            raise ConfigError(f"{f.name} may not be null")
        return None
    try:
        if t == "bool":
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if t == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if t == "float":
            return float(value)  # accepts "inf"
        return str(value)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad value for {f.name}: {value!r}") from err


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
    data.update(overrides or {})
    return RunConfig.from_dict(data).validate()


def field_names() -> list[str]:
    return [f.name for f in fields(RunConfig)]
