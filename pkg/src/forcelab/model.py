"""Attention-based LSTM encoder-decoder with Luong "general" attention.

Everything is batch-first. A single sentence is a batch of one.

Shapes used throughout:
    B  batch size, L  source length (padded), V  target vocabulary,
    H  encoder states ``[B, L, d_enc]`` with ``d_enc = 2 * d_hidden``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from forcelab import autodiff as ad
from forcelab.autodiff import DimensionError, Parameter, Tensor


@dataclass(frozen=True)
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    d_emb: int = 64
    d_hidden: int = 64
    enc_layers: int = 1
    dec_layers: int = 1
    init_range: float = 0.1
    forget_bias: float = 1.0

    def __post_init__(self):
        for name in ("src_vocab", "tgt_vocab", "d_emb", "d_hidden", "enc_layers", "dec_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.init_range <= 0:
            raise ValueError("init_range must be positive")

    @property
    def d_enc(self) -> int:
        return 2 * self.d_hidden

    def to_dict(self) -> dict:
        return asdict(self)


class ModelParams:
    """Named parameter tensors of one model.

    Attribute access works for every name (``params.W_att``); iteration
    yields ``(name, Parameter)`` in a fixed order.
    """

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        self.config = config
        expected = param_shapes(config)
        if set(tensors) != set(expected):
            missing = sorted(set(expected) - set(tensors))
            extra = sorted(set(tensors) - set(expected))
            raise DimensionError(f"parameter names mismatch; missing={missing} extra={extra}")
        self._params: dict[str, Parameter] = {}
        for name, shape in expected.items():
            arr = np.asarray(tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise DimensionError(f"{name}: expected shape {shape}, got {arr.shape}")
            self._params[name] = Parameter(arr, name=name)

    def __getattr__(self, name: str) -> Parameter:
        try:
            return self.__dict__["_params"][name]
        except KeyError:
            raise AttributeError(name) from None

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self._params.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, self.arrays())

    def replace(self, arrays: dict[str, np.ndarray]) -> "ModelParams":
        merged = self.arrays()
        merged.update(arrays)
        return ModelParams(self.config, merged)

    def equal(self, other: "ModelParams") -> bool:
        return self.names() == other.names() and all(
            np.array_equal(p.data, other[n].data) for n, p in self
        )


def _lstm_shapes(prefix: str, d_in: int, d_h: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.W": (d_in + d_h, 4 * d_h), f"{prefix}.b": (4 * d_h,)}


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {
        "src_emb": (cfg.src_vocab, cfg.d_emb),
        "tgt_emb": (cfg.tgt_vocab, cfg.d_emb),
    }
    d_in = cfg.d_emb
    for layer in range(cfg.enc_layers):
        for direction in ("fwd", "bwd"):
            shapes.update(_lstm_shapes(f"enc{layer}.{direction}", d_in, cfg.d_hidden))
        d_in = cfg.d_enc
    shapes["init.W"] = (cfg.d_enc, cfg.dec_layers * 2 * cfg.d_hidden)
    shapes["init.b"] = (cfg.dec_layers * 2 * cfg.d_hidden,)
    d_in = cfg.d_emb
    for layer in range(cfg.dec_layers):
        shapes.update(_lstm_shapes(f"dec{layer}", d_in, cfg.d_hidden))
        d_in = cfg.d_hidden
    shapes["W_att"] = (cfg.d_hidden, cfg.d_enc)
    shapes["out.W"] = (cfg.d_hidden + cfg.d_enc, cfg.tgt_vocab)
    shapes["out.b"] = (cfg.tgt_vocab,)
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> ModelParams:
    """Uniform(-r, r) initialisation; LSTM forget-gate biases start at ``forget_bias``."""
    rng = np.random.default_rng(seed)
    r = cfg.init_range
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        tensors[name] = rng.uniform(-r, r, size=shape)
        if name.endswith(".b") and (name.startswith("enc") or name.startswith("dec")):
            h = cfg.d_hidden
            tensors[name][h : 2 * h] = cfg.forget_bias
    return ModelParams(cfg, tensors)


# ---------------------------------------------------------------------------


@dataclass
class EncoderStates:
    states: Tensor  # [B, L, d_enc]
    mask: np.ndarray  # [B, L] bool, True on real tokens
    lengths: np.ndarray  # [B]
    final: Tensor  # [B, d_enc], last forward state and first backward state

    @property
    def L(self) -> int:
        return self.states.shape[1]


@dataclass
class DecoderState:
    h: list[Tensor]
    c: list[Tensor]
    step: int = 0

    @property
    def top(self) -> Tensor:
        return self.h[-1]


@dataclass
class StepOutput:
    logits: Tensor  # [B, V]
    state: DecoderState
    alpha: Tensor  # model alignment [B, L]
    context: Tensor = field(repr=False)


def lstm_cell(params: ModelParams, prefix: str, x: Tensor, h: Tensor, c: Tensor):
    d = h.shape[-1]
    z = ad.concat([x, h], axis=-1) @ params[f"{prefix}.W"] + params[f"{prefix}.b"]
    i = ad.sigmoid(z[..., 0:d])
    f = ad.sigmoid(z[..., d : 2 * d])
    g = ad.tanh(z[..., 2 * d : 3 * d])
    o = ad.sigmoid(z[..., 3 * d : 4 * d])
    c_new = f * c + i * g
    h_new = o * ad.tanh(c_new)
    return h_new, c_new


def _as_batch(source) -> tuple[np.ndarray, np.ndarray]:
    src = np.asarray(source, dtype=np.int64)
    if src.ndim == 1:
        src = src[None, :]
    return src, np.ones(src.shape, dtype=bool)


def encode(
    params: ModelParams,
    source,
    mask=None,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> EncoderStates:
    """Bidirectional LSTM encoding of ``source`` (``[B, L]`` ids or one sequence).

    Padding is handled by carrying the recurrent state through masked
    positions, so the backward direction starts fresh at each row's last
    real token and the forward direction's final state is the one at the
    last real token.
    """
    cfg = params.config
    if mask is None:
        src, mask = _as_batch(source)
    else:
        src = np.asarray(source, dtype=np.int64)
        mask = np.asarray(mask, dtype=bool)
        if src.ndim == 1:
            src, mask = src[None, :], mask[None, :]
    B, L = src.shape
    if L < 1:
        raise DimensionError("source must have length >= 1")
    lengths = mask.sum(axis=1)
    if np.any(lengths < 1):
        raise DimensionError("every source row needs at least one token")
    if src.min() < 0 or src.max() >= cfg.src_vocab:
        raise IndexError(f"source id out of range [0, {cfg.src_vocab})")

    x = ad.gather_rows(params.src_emb, src)  # [B, L, d_emb]
    x = ad.dropout(x, dropout, rng)
    zero = Tensor(np.zeros((B, cfg.d_hidden)))
    step_masks = [Tensor(mask[:, t : t + 1].astype(np.float64)) for t in range(L)]
    final = None
    for layer in range(cfg.enc_layers):
        outputs = {}
        finals = {}
        for direction, order in (("fwd", range(L)), ("bwd", range(L - 1, -1, -1))):
            h, c = zero, zero
            seq = [None] * L
            for t in order:
                h_new, c_new = lstm_cell(params, f"enc{layer}.{direction}", x[:, t, :], h, c)
                m = step_masks[t]
                h = h + m * (h_new - h)
                c = c + m * (c_new - c)
                seq[t] = h
            outputs[direction] = ad.stack(seq, axis=1)
            finals[direction] = h
        x = ad.concat([outputs["fwd"], outputs["bwd"]], axis=-1)
        final = ad.concat([finals["fwd"], finals["bwd"]], axis=-1)
        if layer + 1 < cfg.enc_layers:
            x = ad.dropout(x, dropout, rng)
    return EncoderStates(states=x, mask=mask, lengths=lengths, final=final)


def init_decoder_state(params: ModelParams, enc: EncoderStates) -> DecoderState:
    """Affine map of the final encoder states; hidden parts pass through tanh."""
    cfg = params.config
    d = cfg.d_hidden
    z = enc.final @ params["init.W"] + params["init.b"]
    hs, cs = [], []
    for layer in range(cfg.dec_layers):
        base = 2 * d * layer
        hs.append(ad.tanh(z[:, base : base + d]))
        cs.append(z[:, base + d : base + 2 * d])
    return DecoderState(h=hs, c=cs, step=0)


def attend(params: ModelParams, query: Tensor, enc: EncoderStates) -> Tensor:
    """Alignment over source positions: softmax_l(query^T W_att h_l) with padding masked."""
    B, L, d_enc = enc.states.shape
    q = (query @ params.W_att).reshape(B, d_enc, 1)
    scores = ad.matmul(enc.states, q).reshape(B, L)
    return ad.softmax(scores, mask=enc.mask)


def context(alpha, enc: EncoderStates) -> Tensor:
    """Weighted sum of encoder states."""
    alpha = ad.as_tensor(alpha)
    B, L, d_enc = enc.states.shape
    if alpha.shape != (B, L):
        raise DimensionError(f"alignment shape {alpha.shape} does not match source {(B, L)}")
    return ad.matmul(alpha.reshape(B, 1, L), enc.states).reshape(B, d_enc)


def decoder_step(
    params: ModelParams,
    prev_tokens,
    state: DecoderState,
    enc: EncoderStates,
    ref_alpha=None,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> StepOutput:
    """One decoder step.

    The recurrent state is updated from ``prev_tokens``; the model's own
    alignment is always computed and returned. The context feeding the
    output layer comes from ``ref_alpha`` when given, otherwise from the
    model's alignment.
    """
    cfg = params.config
    prev = np.atleast_1d(np.asarray(prev_tokens, dtype=np.int64))
    if prev.min() < 0 or prev.max() >= cfg.tgt_vocab:
        raise IndexError(f"previous token out of range [0, {cfg.tgt_vocab})")
    x = ad.dropout(ad.gather_rows(params.tgt_emb, prev), dropout, rng)
    hs, cs = [], []
    for layer in range(cfg.dec_layers):
        h, c = lstm_cell(params, f"dec{layer}", x, state.h[layer], state.c[layer])
        hs.append(h)
        cs.append(c)
        x = ad.dropout(h, dropout, rng) if layer + 1 < cfg.dec_layers else h
    s_t = hs[-1]
    alpha = attend(params, s_t, enc)
    if ref_alpha is not None:
        ref = ad.as_tensor(ref_alpha)
        if ref.ndim == 1:
            ref = ref.reshape(1, -1)
        if ref.shape[-1] != enc.L:
            raise DimensionError(f"reference alignment length {ref.shape[-1]} != source length {enc.L}")
        ctx = context(ref, enc)
    else:
        ctx = context(alpha, enc)
    feat = ad.dropout(ad.concat([s_t, ctx], axis=-1), dropout, rng)
    logits = feat @ params["out.W"] + params["out.b"]
    return StepOutput(logits=logits, state=DecoderState(hs, cs, state.step + 1), alpha=alpha, context=ctx)
