from pathlib import Path

import numpy as np
import pytest

from forcelab.data import pad_batch
from forcelab.model import ModelConfig, ModelParams, init_params

FIXTURES = Path(__file__).parent / "fixtures"


def tiny_config(V=7, d=4, **kw):
    return ModelConfig(src_vocab=V, tgt_vocab=V, d_emb=d, d_hidden=d, **kw)


def tiny_model(seed=0, init_range=0.5, **kw) -> ModelParams:
    return init_params(tiny_config(init_range=init_range, **kw), seed)


def tiny_batch(seed=0, V=7, L=3, T=3, B=2, ragged=False):
    """Random ids avoiding reserved tokens; target rows get EOS appended."""
    rng = np.random.default_rng(seed)
    src, tgt = [], []
    for b in range(B):
        Lb = L - (b % 2) if ragged else L
        Tb = T - (b % 2) if ragged else T
        src.append(rng.integers(4, V, size=Lb).tolist())
        tgt.append(rng.integers(4, V, size=Tb - 1).tolist())
    return pad_batch(src, tgt)


def numeric_grad(fn, params: ModelParams, name: str, step: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``fn(params)`` w.r.t. every element of ``name``."""
    base = params.arrays()
    grad = np.zeros_like(base[name])
    for idx in np.ndindex(grad.shape):
        plus = {k: v.copy() for k, v in base.items()}
        minus = {k: v.copy() for k, v in base.items()}
        plus[name][idx] += step
        minus[name][idx] -= step
        grad[idx] = (fn(ModelParams(params.config, plus)) - fn(ModelParams(params.config, minus))) / (2 * step)
    return grad


def numeric_grad4(fn, params: ModelParams, name: str, step: float = 1e-4) -> np.ndarray:
    """Fourth-order central differences; truncation error O(step**4)."""
    base = params.arrays()
    grad = np.zeros_like(base[name])

    def at(idx, d):
        arrays = {k: v.copy() for k, v in base.items()}
        arrays[name][idx] += d
        return fn(ModelParams(params.config, arrays))

    for idx in np.ndindex(grad.shape):
        grad[idx] = (at(idx, -2 * step) - 8 * at(idx, -step) + 8 * at(idx, step) - at(idx, 2 * step)) / (12 * step)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Elementwise relative error, with absolute error used for near-zero entries."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
