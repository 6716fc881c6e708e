import math

import numpy as np
import pytest

from forcelab import autodiff as ad
from forcelab.autodiff import DimensionError, Tensor
from forcelab.model import (
    EncoderStates,
    ModelConfig,
    ModelParams,
    attend,
    context,
    decoder_step,
    encode,
    init_decoder_state,
    init_params,
    param_shapes,
)
from forcelab.regimes import unroll

from conftest import tiny_batch, tiny_config, tiny_model


def test_init_uniform_and_seeded():
    cfg = tiny_config(init_range=0.3)
    a, b = init_params(cfg, 1), init_params(cfg, 1)
    assert a.equal(b)
    assert not a.equal(init_params(cfg, 2))
    for name, p in a:
        assert p.shape == param_shapes(cfg)[name]
        if name.endswith(".b") and name[:3] in ("enc", "dec"):
            d = cfg.d_hidden
            np.testing.assert_array_equal(p.data[d : 2 * d], 1.0)
        else:
            assert np.all(np.abs(p.data) < 0.3)


def test_param_shapes_consistent_multi_layer():
    cfg = ModelConfig(11, 13, d_emb=5, d_hidden=3, enc_layers=2, dec_layers=3)
    shapes = param_shapes(cfg)
    assert shapes["enc1.fwd.W"] == (2 * 3 + 3, 12)
    assert shapes["dec2.W"] == (3 + 3, 12)
    assert shapes["init.W"] == (6, 3 * 2 * 3)
    assert shapes["out.W"] == (3 + 6, 13)
    params = init_params(cfg, 0)
    batch = tiny_batch(V=11, L=4, T=3, B=2)
    with ad.no_grad():
        out = unroll(params, batch, "reference")
    assert out.logits.shape == (2, 3, 13)


def test_params_reject_bad_shapes():
    cfg = tiny_config()
    arrays = init_params(cfg, 0).arrays()
    arrays["W_att"] = np.zeros((2, 2))
    with pytest.raises(DimensionError):
        ModelParams(cfg, arrays)


def test_encode_length_one():
    enc = encode(tiny_model(), [5])
    assert enc.L == 1
    assert enc.states.shape == (1, 1, 8)


def test_encode_deterministic():
    p = tiny_model()
    a = encode(p, [4, 5, 6]).states.data
    b = encode(p, [4, 5, 6]).states.data
    assert a.tobytes() == b.tobytes()


def test_encode_oov_raises():
    with pytest.raises(IndexError):
        encode(tiny_model(), [4, 7])


def test_reversed_input_mirrors_directions():
    # with both directions sharing weights, the backward half of x at i
    # equals the forward half of reversed(x) at L+1-i
    p = tiny_model(seed=3)
    arrays = p.arrays()
    arrays["enc0.bwd.W"] = arrays["enc0.fwd.W"].copy()
    arrays["enc0.bwd.b"] = arrays["enc0.fwd.b"].copy()
    p = ModelParams(p.config, arrays)
    x = [4, 6, 5, 6, 4, 5]
    d = p.config.d_hidden
    fwd_rev = encode(p, x[::-1]).states.data[0, :, :d]
    bwd = encode(p, x).states.data[0, :, d:]
    np.testing.assert_array_equal(bwd, fwd_rev[::-1])


def test_padding_does_not_change_real_positions():
    p = tiny_model(seed=4)
    alone = encode(p, [4, 5, 6]).states.data[0]
    src = np.array([[4, 5, 6, 0, 0], [6, 6, 5, 4, 4]])
    mask = src != 0
    padded = encode(p, src, mask).states.data[0, :3]
    np.testing.assert_allclose(padded, alone, rtol=0, atol=1e-15)


def _enc_from(states, mask=None):
    states = np.asarray(states, dtype=float)
    if mask is None:
        mask = np.ones(states.shape[:2], dtype=bool)
    return EncoderStates(Tensor(states), mask, mask.sum(axis=1), Tensor(states[:, -1]))


def test_attend_single_position():
    p = tiny_model()
    enc = _enc_from(np.random.default_rng(0).normal(size=(1, 1, 8)))
    alpha = attend(p, Tensor(np.ones((1, 4))), enc)
    np.testing.assert_array_equal(alpha.data, [[1.0]])
    np.testing.assert_array_equal(context(alpha, enc).data, enc.states.data[:, 0])


def test_attend_zero_weights_uniform():
    arrays = tiny_model().arrays()
    arrays["W_att"][:] = 0
    p = ModelParams(tiny_config(), arrays)
    enc = _enc_from(np.random.default_rng(0).normal(size=(2, 5, 8)))
    alpha = attend(p, Tensor(np.ones((2, 4))), enc).data
    np.testing.assert_allclose(alpha, 0.2, atol=1e-15)


def test_attend_hand_case_against_scalar_loops():
    cfg = ModelConfig(5, 5, d_emb=2, d_hidden=1)
    arrays = init_params(cfg, 0).arrays()
    W = np.array([[0.7, -1.3]])
    arrays["W_att"] = W
    p = ModelParams(cfg, arrays)
    H = [[0.5, -1.0], [2.0, 0.25], [-0.75, 1.5]]
    s = [1.2]
    enc = _enc_from([H])
    alpha = attend(p, Tensor([s]), enc).data[0]
    c = context(Tensor(alpha[None]), enc).data[0]
    scores = []
    for l in range(3):
        total = 0.0
        for i in range(1):
            for j in range(2):
                total += s[i] * W[i][j] * H[l][j]
        scores.append(total)
    z = sum(math.exp(v) for v in scores)
    expected = [math.exp(v) / z for v in scores]
    np.testing.assert_allclose(alpha, expected, rtol=1e-14)
    for j in range(2):
        assert c[j] == pytest.approx(sum(expected[l] * H[l][j] for l in range(3)), rel=1e-14)


def test_attend_masked_positions_get_zero():
    p = tiny_model()
    mask = np.array([[True, True, False, False]])
    enc = _enc_from(np.random.default_rng(1).normal(size=(1, 4, 8)), mask)
    alpha = attend(p, Tensor(np.ones((1, 4))), enc).data
    assert alpha[0, 2] == 0.0 and alpha[0, 3] == 0.0


def test_reference_alpha_equal_to_own_gives_identical_logits():
    p = tiny_model(seed=2)
    enc = encode(p, [4, 5, 6, 5])
    st = init_decoder_state(p, enc)
    own = decoder_step(p, [1], st, enc)
    forced = decoder_step(p, [1], st, enc, ref_alpha=own.alpha.data)
    assert own.logits.data.tobytes() == forced.logits.data.tobytes()
    assert own.state.step == 1 and forced.state.step == 1


def test_decoder_state_dependence():
    p = tiny_model(seed=2)
    enc = encode(p, [4, 5, 6])
    st0 = init_decoder_state(p, enc)
    st1 = decoder_step(p, [5], st0, enc).state
    a = decoder_step(p, [4], st0, enc).logits.data
    b = decoder_step(p, [4], st1, enc).logits.data
    assert not np.allclose(a, b)


def test_decoder_alpha_on_simplex_and_ref_length_checked():
    p = tiny_model(seed=2)
    enc = encode(p, [4, 5, 6])
    out = decoder_step(p, [1], init_decoder_state(p, enc), enc)
    assert abs(out.alpha.data.sum() - 1) < 1e-8 and np.all(out.alpha.data >= 0)
    with pytest.raises(DimensionError):
        decoder_step(p, [1], init_decoder_state(p, enc), enc, ref_alpha=np.ones(4) / 4)


def test_teacher_forced_pass_shapes_and_padding():
    p = tiny_model(seed=5)
    batch = tiny_batch(seed=1, L=5, T=4, B=4, ragged=True)
    with ad.no_grad():
        out = unroll(p, batch, "reference")
    B, T = batch.tgt.shape
    assert out.logits.shape == (B, T, 7)
    assert out.alphas.shape == (B, T, batch.src.shape[1])
    pad = ~batch.src_mask
    assert np.all(out.alphas.data[np.broadcast_to(pad[:, None, :], out.alphas.shape)] == 0.0)
    with ad.no_grad():
        again = unroll(p, batch, "reference")
    assert out.logits.data.tobytes() == again.logits.data.tobytes()
