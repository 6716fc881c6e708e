"""Reverse-mode automatic differentiation over dense float64 arrays.

Operations record themselves on the active :class:`Tape` (define-by-run).
When no tape is active, or no operand requires a gradient, operations run
as plain numpy and nothing is recorded, which is what inference uses.

    >>> W = Parameter(np.eye(2), name="W")
    >>> with Tape() as tape:
    ...     loss = sum_(W * W)
    >>> grads = backward(loss, tape)
    >>> grads[W]
    array([[2., 0.],
           [0., 2.]])
"""

from __future__ import annotations

import contextvars
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64
SIMPLEX_TOL = 1e-8


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "forcelab_active_tape", default=None
)


class Tensor:
    """Immutable numeric value, optionally a node on a gradient tape."""

    __slots__ = ("data", "requires_grad", "node_id", "name", "is_param", "grad")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr is data:
            arr = arr.copy()
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.name = name
        self.is_param = False
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A learnable leaf. Only parameters receive gradients from :func:`backward`."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)
        self.is_param = True


class _Record:
    __slots__ = ("output", "inputs", "vjp")

    def __init__(self, output: Tensor, inputs: tuple[Tensor, ...], vjp: Callable):
        self.output = output
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations executed inside the block are
    appended in execution order, so operands always precede their users.
    A tape is single-owner. Independent tapes may be used from different
    threads since the active tape is tracked per context.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    def __len__(self) -> int:
        return len(self.records)


class no_grad:
    """Suspend recording inside the block."""

    def __enter__(self):
        self._token = _ACTIVE_TAPE.set(None)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._token)
        return False


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """A non-differentiable copy of ``x`` (detaches tensors)."""
    return Tensor(x.data if isinstance(x, Tensor) else x)


def _result(data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    data = np.asarray(data, dtype=DTYPE)
    data.flags.writeable = False
    out.data = data
    out.name = None
    out.is_param = False
    out.grad = None
    out.node_id = None
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node_id = len(tape.records)
        tape.records.append(_Record(out, tuple(inputs), vjp))
    else:
        out.requires_grad = False
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), vjp)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    xd = x.data
    z = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError("log of non-positive value")
    xd = x.data
    return _result(np.log(xd), (x,), lambda g: (g / xd,))


# ---------------------------------------------------------------------------
# linear algebra and shape


def matmul(a, b) -> Tensor:
    """Matrix product; leading dimensions broadcast as in ``np.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(a.data @ b.data, (a, b), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of no tensors")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as err:
        raise DimensionError(
            f"concat shape mismatch: {[t.shape for t in tensors]}"
        ) from err
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(data, tensors, vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _result(data, tensors, vjp)


def index_select(x: Tensor, index) -> Tensor:
    """Basic or advanced indexing; gradients scatter-add back."""
    src = x.shape

    def vjp(g):
        full = np.zeros(src, dtype=DTYPE)
        np.add.at(full, index, g)
        return (full,)

    return _result(x.data[index], (x,), vjp)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: rows of ``table`` at integer ``ids`` (any shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"row id out of range [0, {n}): {ids.min()}..{ids.max()}")
    rows = table.shape

    def vjp(g):
        full = np.zeros(rows, dtype=DTYPE)
        np.add.at(full, ids, g)
        return (full,)

    return _result(table.data[ids], (table,), vjp)


# ---------------------------------------------------------------------------
# reductions


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = x.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _result(x.data.sum(axis=axis, keepdims=keepdims), (x,), vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# probability


def softmax(x: Tensor, mask=None) -> Tensor:
    """Softmax along the last axis.

    ``mask`` (bool, broadcastable to ``x``) marks valid entries; masked
    entries get exactly zero probability.
    """
    xd = x.data
    if xd.ndim == 0 or xd.shape[-1] == 0:
        raise DimensionError("softmax of empty input")
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        if not mask.any(axis=-1).all():
            raise ContractError("softmax row with every position masked")
        shifted = np.where(mask, xd, -np.inf)
    else:
        shifted = xd
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), vjp)


def log_softmax(x: Tensor) -> Tensor:
    xd = x.data
    shifted = xd - xd.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def vjp(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _result(y, (x,), vjp)


def cross_entropy_from_logits(logits: Tensor, target) -> Tensor:
    """``-log softmax(logits)[target]`` along the last axis.

    ``logits`` is ``[..., V]`` and ``target`` holds integer ids of shape
    ``[...]``; the result has shape ``[...]``.
    """
    xd = logits.data
    V = xd.shape[-1]
    target = np.asarray(target, dtype=np.int64)
    if target.shape != xd.shape[:-1]:
        raise DimensionError(f"target shape {target.shape} vs logits {xd.shape}")
    if target.size and (target.min() < 0 or target.max() >= V):
        raise IndexError(f"target id out of range [0, {V})")
    shifted = xd - xd.max(axis=-1, keepdims=True)
    sumexp = np.exp(shifted).sum(axis=-1, keepdims=True)
    logp = shifted - np.log(sumexp)
    picked = np.take_along_axis(logp, target[..., None], axis=-1)[..., 0]

    def vjp(g):
        grad = np.exp(logp)
        np.put_along_axis(
            grad, target[..., None],
            np.take_along_axis(grad, target[..., None], axis=-1) - 1.0, axis=-1,
        )
        return (grad * np.asarray(g)[..., None],)

    return _result(-picked, (logits,), vjp)


def check_simplex(p: np.ndarray, what: str = "distribution", tol: float = SIMPLEX_TOL):
    if np.any(p < -tol) or np.any(np.abs(p.sum(axis=-1) - 1.0) > tol):
        raise DomainError(f"{what} is not on the probability simplex (tol {tol})")


def kl_categorical(p, q) -> Tensor:
    """KL(p || q) along the last axis with ``0 * log 0 = 0``.

    Positions where both ``p`` and ``q`` are zero (padding) contribute
    nothing. ``q`` must be positive wherever ``p`` is.
    """
    p, q = as_tensor(p), as_tensor(q)
    if p.shape != q.shape:
        raise DimensionError(f"KL shape mismatch: {p.shape} vs {q.shape}")
    pd, qd = p.data, q.data
    check_simplex(pd, "p")
    check_simplex(qd, "q")
    support = pd > 0
    if np.any(support & (qd <= 0)):
        raise DomainError("q has zero mass where p is positive")
    safe_p = np.where(support, pd, 1.0)
    safe_q = np.where(qd > 0, qd, 1.0)
    logratio = np.where(support, np.log(safe_p) - np.log(safe_q), 0.0)
    value = (pd * logratio).sum(axis=-1)

    def vjp(g):
        g = np.asarray(g)[..., None]
        gp = np.where(support, logratio + 1.0, 0.0) * g
        gq = np.where(support, -pd / safe_q, 0.0) * g
        return gp, gq

    return _result(value, (p, q), vjp)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rate == 0`` or ``rng`` is None."""
    if rng is None or rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))


# ---------------------------------------------------------------------------


def backward(loss: Tensor, tape: Tape) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss) back through ``tape``.

    Returns a mapping from every parameter reached to its gradient and also
    stores it on ``param.grad``. Parameters that do not influence the loss
    get zero gradients only if they appear on the tape.
    """
    if loss.data.size != 1 or loss.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node_id is None:
        raise ContractError("loss was not produced on a tape")
    if loss.node_id >= len(tape.records) or tape.records[loss.node_id].output is not loss:
        raise ContractError("loss does not belong to this tape")

    grads: dict[int, np.ndarray] = {loss.node_id: np.ones((), dtype=DTYPE)}
    leaf_grads: dict[int, np.ndarray] = {}
    leaves: dict[int, Tensor] = {}
    for record in reversed(tape.records[: loss.node_id + 1]):
        g = grads.pop(record.output.node_id, None)
        if g is None:
            continue
        input_grads = record.vjp(g)
        for inp, ig in zip(record.inputs, input_grads):
            if not inp.requires_grad or ig is None:
                continue
            if inp.node_id is not None:
                key, store = inp.node_id, grads
            elif inp.is_param:
                key, store = id(inp), leaf_grads
                leaves[key] = inp
            else:
                continue
            prev = store.get(key)
            store[key] = ig if prev is None else prev + ig

    out: dict[Tensor, np.ndarray] = {}
    for key, param in leaves.items():
        g = np.asarray(leaf_grads[key], dtype=DTYPE).reshape(param.shape)
        param.grad = g
        out[param] = g
    return out
