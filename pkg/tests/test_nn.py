import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import moca.autodiff as ad
from fd_oracle import fd_check
from moca.autodiff import constant, mean_all, square, sum_all
from moca.errors import ConfigError, DimensionError
from moca.nn import (
    EncoderLayerParams,
    GateParams,
    HeadParams,
    MhaParams,
    _mha_with_weights,
    encode,
    fuse_gate,
    mlp_head,
    multi_head_attention,
    query_pool,
)
from moca.rng import stream


def attention_oracle(q, k, v, p, heads):
    """Plain numpy multi-head attention; head h reads contiguous columns."""
    Q, K, V = q @ p.wq.data, k @ p.wk.data, v @ p.wv.data
    d = Q.shape[-1]
    dk = d // heads
    outs = []
    for h in range(heads):
        sl = slice(h * dk, (h + 1) * dk)
        s = Q[..., sl] @ K[..., sl].swapaxes(-1, -2) / np.sqrt(dk)
        e = np.exp(s - s.max(axis=-1, keepdims=True))
        w = e / e.sum(axis=-1, keepdims=True)
        outs.append(w @ V[..., sl])
    return np.concatenate(outs, axis=-1) @ p.wo.data


@pytest.mark.parametrize("heads", [1, 2, 4])
@pytest.mark.parametrize("seed", range(5))
def test_attention_matches_numpy_oracle(heads, seed):
    rng = stream(seed, 20)
    d = 8
    p = MhaParams.init(rng, d, heads)
    q = rng.standard_normal((3, 2, d))
    kv = rng.standard_normal((3, 5, d))
    out = multi_head_attention(constant(q), constant(kv), constant(kv), p)
    expect = attention_oracle(q, kv, kv, p, heads)
    assert np.allclose(out.data, expect, atol=1e-10)


def test_attention_weights_are_row_stochastic():
    rng = stream(0, 21)
    p = MhaParams.init(rng, 8, 2)
    h = constant(rng.standard_normal((4, 6, 8)))
    _, attn = _mha_with_weights(h, h, h, p)
    assert attn.data.shape == (4, 2, 6, 6)
    assert np.allclose(attn.data.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(attn.data >= 0)


def test_single_key_pooling_ignores_the_query():
    # softmax over one key is 1, so the pooled vector is v @ wv @ wo
    rng = stream(1, 22)
    d = 8
    p = MhaParams.init(rng, d, 2)
    kv = rng.standard_normal((2, 1, d))
    out1 = query_pool(constant(rng.standard_normal((2, 1, d))), constant(kv), p)
    out2 = query_pool(constant(rng.standard_normal((2, 1, d))), constant(kv), p)
    assert np.allclose(out1.data, out2.data, atol=1e-12)
    assert np.allclose(out1.data, (kv @ p.wv.data @ p.wo.data)[:, 0, :], atol=1e-12)


def test_identical_keys_give_uniform_attention():
    rng = stream(2, 23)
    p = MhaParams.init(rng, 8, 2)
    row = rng.standard_normal(8)
    keys = constant(np.tile(row, (1, 7, 1)))
    q = constant(rng.standard_normal((1, 1, 8)))
    _, attn = _mha_with_weights(q, keys, keys, p)
    assert np.allclose(attn.data, 1.0 / 7.0, atol=1e-12)


def test_head_count_must_divide_width():
    with pytest.raises(ConfigError):
        MhaParams.init(stream(0, 24), 8, 3)
    with pytest.raises(ConfigError):
        MhaParams.init(stream(0, 24), 8, 0)


def test_attention_width_mismatch_raises():
    rng = stream(0, 25)
    p = MhaParams.init(rng, 8, 2)
    good = constant(np.zeros((1, 2, 8)))
    bad = constant(np.zeros((1, 2, 6)))
    with pytest.raises(DimensionError):
        multi_head_attention(bad, good, good, p)
    with pytest.raises(DimensionError):
        multi_head_attention(good, bad, bad, p)


@pytest.mark.parametrize("seed", range(3))
def test_fd_through_attention(seed):
    rng = stream(seed, 26)
    d = 4
    p = MhaParams.init(rng, d, 2)
    q = constant(rng.standard_normal((2, 1, d)))
    kv = ad.param(rng.standard_normal((2, 3, d)))
    fd_check(
        lambda: sum_all(square(multi_head_attention(q, kv, kv, p))),
        p.tensors() + [kv],
    )


# ---------------------------------------------------------------------------
# encoder


def test_encoder_preserves_shape_and_normalizes_rows():
    rng = stream(3, 27)
    lp = EncoderLayerParams.init(rng, 8, 2, 16)
    h = constant(stream(4, 27).standard_normal((5, 6, 8)))
    out = encode(h, [lp])
    assert out.data.shape == (5, 6, 8)
    # final sublayer ends in layer_norm with identity affine at init
    assert np.allclose(out.data.mean(axis=-1), 0.0, atol=1e-10)


def test_encoder_is_permutation_equivariant():
    rng = stream(5, 28)
    lp = EncoderLayerParams.init(rng, 8, 2, 16)
    h = stream(6, 28).standard_normal((2, 7, 8))
    perm = stream(7, 28).permutation(7)
    out = encode(constant(h), [lp]).data
    out_p = encode(constant(h[:, perm, :]), [lp]).data
    assert np.allclose(out_p, out[:, perm, :], atol=1e-10)


def test_query_pool_is_permutation_invariant():
    rng = stream(8, 29)
    p = MhaParams.init(rng, 8, 2)
    q = constant(rng.standard_normal((3, 1, 8)))
    tokens = stream(9, 29).standard_normal((3, 6, 8))
    perm = stream(10, 29).permutation(6)
    a = query_pool(q, constant(tokens), p).data
    b = query_pool(q, constant(tokens[:, perm, :]), p).data
    assert a.shape == (3, 8)
    assert np.allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("seed", range(2))
def test_fd_through_encoder_layer(seed):
    rng = stream(seed, 30)
    lp = EncoderLayerParams.init(rng, 4, 2, 8)
    h = ad.param(rng.standard_normal((2, 3, 4)))
    w = constant(rng.standard_normal((2, 3, 4)))
    fd_check(lambda: sum_all(encode(h, [lp]) * w), lp.tensors() + [h])


# ---------------------------------------------------------------------------
# gated fusion


def _fixed_logit_gate(k, d, logits, temperature=1.0):
    """Gate whose MLP is forced to output the given logits (w1=0, b2=logits)."""
    hidden = 4
    return GateParams(
        w1=ad.param(np.zeros((k * d, hidden))),
        b1=ad.param(np.zeros(hidden)),
        w2=ad.param(np.zeros((hidden, k))),
        b2=ad.param(np.asarray(logits, dtype=float)),
        temperature=temperature,
        k=k,
    )


def test_gate_hand_fixture_two_thirds_one_third():
    d = 4
    gp = _fixed_logit_gate(2, d, [np.log(2.0), 0.0])
    z1 = constant(np.full((3, d), 1.0))
    z2 = constant(np.full((3, d), -2.0))
    weights, fused, wc = fuse_gate([z1, z2], gp)
    assert np.allclose(weights.data, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)
    assert np.allclose(fused.data, (2.0 / 3.0) * 1.0 + (1.0 / 3.0) * -2.0, atol=1e-12)
    assert wc.data.shape == (3, 2 * d)
    assert np.allclose(wc.data[:, :d], 2.0 / 3.0, atol=1e-12)
    assert np.allclose(wc.data[:, d:], -2.0 / 3.0, atol=1e-12)


def test_gate_temperature_flattens_and_sharpens():
    gp_hot = _fixed_logit_gate(2, 2, [3.0, 0.0], temperature=100.0)
    gp_cold = _fixed_logit_gate(2, 2, [3.0, 0.0], temperature=0.05)
    z = [constant(np.ones((1, 2))), constant(np.ones((1, 2)))]
    w_hot = fuse_gate(z, gp_hot)[0].data
    w_cold = fuse_gate(z, gp_cold)[0].data
    assert np.allclose(w_hot, 0.5, atol=0.01)
    assert w_cold[0, 0] > 0.999


def test_gate_branch_count_mismatch():
    gp = _fixed_logit_gate(2, 4, [0.0, 0.0])
    with pytest.raises(ConfigError):
        fuse_gate([constant(np.ones((1, 4)))], gp)


def test_gate_rejects_bad_temperature():
    with pytest.raises(ConfigError):
        GateParams.init(stream(0, 31), 2, 4, 8, temperature=0.0)


@given(st.integers(0, 2**31 - 1))
def test_gate_weights_are_a_distribution(seed):
    rng = stream(seed, 32)
    gp = GateParams.init(rng, 3, 4, 8, temperature=1.0)
    zs = [constant(rng.standard_normal((5, 4))) for _ in range(3)]
    weights, fused, wc = fuse_gate(zs, gp)
    assert np.allclose(weights.data.sum(axis=-1), 1.0, atol=1e-10)
    assert np.all(weights.data >= 0)
    assert fused.data.shape == (5, 4)
    assert wc.data.shape == (5, 12)


@pytest.mark.parametrize("seed", range(2))
def test_fd_through_gate_and_head(seed):
    rng = stream(seed, 33)
    d = 4
    gp = GateParams.init(rng, 2, d, 6, temperature=0.7)
    hp = HeadParams.init(rng, 2 * d, 6)
    z1 = ad.param(rng.standard_normal((3, d)))
    z2 = ad.param(rng.standard_normal((3, d)))

    def loss():
        _, _, wc = fuse_gate([z1, z2], gp)
        return mean_all(square(mlp_head(wc, hp)))

    fd_check(loss, gp.tensors() + hp.tensors() + [z1, z2])
