import math

import numpy as np
import pytest

from forcelab.model import ModelParams
from forcelab.optim import Adam, NonFiniteGradientError, clip_by_global_norm

from conftest import tiny_model


def test_zero_gradient_leaves_params_unchanged():
    p = tiny_model()
    grads = {name: np.zeros(t.shape) for name, t in p}
    new = Adam().step(p, grads, lr=0.01)
    assert new.equal(p)


def test_clip_scales_norm_ten_to_one():
    g = {"a": np.array([6.0, 0.0]), "b": np.array([[0.0, 8.0]])}
    clipped, norm = clip_by_global_norm(g, 1.0)
    assert norm == 10.0
    np.testing.assert_allclose(clipped["a"], [0.6, 0.0], rtol=1e-15)
    np.testing.assert_allclose(clipped["b"], [[0.0, 0.8]], rtol=1e-15)
    same, _ = clip_by_global_norm(g, 20.0)
    assert same["a"] is g["a"]


def test_adam_two_steps_against_scalar_formula():
    p = tiny_model()
    arrays = p.arrays()
    arrays["out.b"][:] = 1.0
    p = ModelParams(p.config, arrays)
    opt = Adam()
    g1, g2, lr = 0.5, -0.2, 0.1
    p1 = opt.step(p, {"out.b": np.full(7, g1)}, lr, clip_norm=None)
    p2 = opt.step(p1, {"out.b": np.full(7, g2)}, lr, clip_norm=None)

    m = 0.1 * g1
    v = 0.001 * g1 * g1
    x1 = 1.0 - lr * (m / 0.1) / (math.sqrt(v / 0.001) + 1e-8)
    m = 0.9 * m + 0.1 * g2
    v = 0.999 * v + 0.001 * g2 * g2
    x2 = x1 - lr * (m / (1 - 0.9**2)) / (math.sqrt(v / (1 - 0.999**2)) + 1e-8)
    assert p1["out.b"].data[0] == pytest.approx(x1, rel=1e-14)
    assert p2["out.b"].data[0] == pytest.approx(x2, rel=1e-14)
    # untouched parameters stay put
    np.testing.assert_array_equal(p2["W_att"].data, p["W_att"].data)


def test_step_does_not_mutate_input():
    p = tiny_model()
    before = p.arrays()
    Adam().step(p, {"W_att": np.ones(p["W_att"].shape)}, 0.1)
    for name, arr in before.items():
        np.testing.assert_array_equal(p[name].data, arr)


def test_nonfinite_gradient_names_parameter():
    p = tiny_model()
    g = np.zeros(p["dec0.W"].shape)
    g[0, 0] = np.nan
    with pytest.raises(NonFiniteGradientError, match="dec0.W"):
        Adam().step(p, {"dec0.W": g}, 0.1)
    g[0, 0] = np.inf
    with pytest.raises(NonFiniteGradientError, match="dec0.W"):
        Adam().step(p, {"dec0.W": g}, 0.1)


def test_state_round_trip():
    p = tiny_model()
    a = Adam()
    g = {"W_att": np.full(p["W_att"].shape, 0.3)}
    p1 = a.step(p, g, 0.01)
    b = Adam()
    b.load_arrays(a.state_arrays(), a.t)
    assert a.step(p1, g, 0.01).equal(b.step(p1, g, 0.01))
