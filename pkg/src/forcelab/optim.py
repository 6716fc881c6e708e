from __future__ import annotations

import numpy as np

from forcelab.model import ModelParams


class NonFiniteGradientError(FloatingPointError):
    pass


def clip_by_global_norm(grads: dict[str, np.ndarray], clip_norm: float | None):
    """Scale all gradients together so their joint L2 norm is at most ``clip_norm``."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if clip_norm is None or clip_norm <= 0 or norm <= clip_norm:
        return grads, norm
    scale = clip_norm / norm
    return {n: g * scale for n, g in grads.items()}, norm


class Adam:
    """Adam with global-norm gradient clipping. Moment state lives here."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: ModelParams, grads: dict[str, np.ndarray], lr: float,
             clip_norm: float | None = 1.0) -> ModelParams:
        """Return new parameters after one update; ``params`` is not modified."""
        for name, g in grads.items():
            if g.shape != params[name].shape:
                raise ValueError(f"gradient for {name} has shape {g.shape}, expected {params[name].shape}")
            if not np.all(np.isfinite(g)):
                bad = int(np.size(g) - np.isfinite(g).sum())
                raise NonFiniteGradientError(f"non-finite gradient in parameter {name!r} ({bad} entries)")
        grads, _ = clip_by_global_norm(grads, clip_norm)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        updated = {}
        for name, p in params:
            g = grads.get(name)
            if g is None:
                g = np.zeros(p.shape)
            m = self.m.get(name, np.zeros(p.shape))
            v = self.v.get(name, np.zeros(p.shape))
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            self.m[name], self.v[name] = m, v
            updated[name] = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return ModelParams(params.config, updated)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"adam.m/{n}": a for n, a in self.m.items()}
        out.update({f"adam.v/{n}": a for n, a in self.v.items()})
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.m = {k[len("adam.m/"):]: v.copy() for k, v in arrays.items() if k.startswith("adam.m/")}
        self.v = {k[len("adam.v/"):]: v.copy() for k, v in arrays.items() if k.startswith("adam.v/")}
        self.t = int(t)


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], optimizer: Adam, lr: float,
              clip_norm: float | None = 1.0) -> ModelParams:
    return optimizer.step(params, grads, lr, clip_norm)
