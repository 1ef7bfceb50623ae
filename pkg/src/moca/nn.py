"""Attention blocks, gated fusion, and small MLP heads.

Row-vector convention throughout: activations are [..., features] and
linear maps apply as x @ W + b with W of shape [fan_in, fan_out].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, concat, gelu, layer_norm, matmul, mul, reshape, slice_last, softmax, transpose
from .errors import ConfigError, DimensionError
from .rng import uniform_init


def linear_params(rng, fan_in, fan_out):
    w = ad.param(uniform_init(rng, (fan_in, fan_out), fan_in))
    b = ad.param(uniform_init(rng, (fan_out,), fan_in))
    return w, b


def linear(x, w, b):
    return matmul(x, w) + b


# ---------------------------------------------------------------------------
# multi-head attention


@dataclass
class MhaParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    heads: int

    @classmethod
    def init(cls, rng, d, heads):
        if heads < 1 or d % heads != 0:
            raise ConfigError(f"model width {d} is not divisible by {heads} heads")
        mats = [ad.param(uniform_init(rng, (d, d), d)) for _ in range(4)]
        return cls(*mats, heads=heads)

    def tensors(self):
        return [self.wq, self.wk, self.wv, self.wo]

    def named_tensors(self):
        return [("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)]


def _split_heads(t, heads):
    # [..., s, d] -> [..., heads, s, d/heads]
    *lead, s, d = t.data.shape
    r = reshape(t, (*lead, s, heads, d // heads))
    nd = len(lead) + 3
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    return transpose(r, axes)


def _merge_heads(t):
    # [..., heads, s, dk] -> [..., s, heads*dk]
    *lead, m, s, dk = t.data.shape
    nd = len(lead) + 3
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    return reshape(transpose(t, axes), (*lead, s, m * dk))


def _mha_with_weights(query, keys, values, params):
    d = params.wq.data.shape[0]
    if query.data.shape[-1] != d or keys.data.shape[-1] != d:
        raise DimensionError(
            f"attention width mismatch: inputs {query.data.shape[-1]}/"
            f"{keys.data.shape[-1]}, projections {d}"
        )
    dk = d // params.heads
    q = _split_heads(matmul(query, params.wq), params.heads)
    k = _split_heads(matmul(keys, params.wk), params.heads)
    v = _split_heads(matmul(values, params.wv), params.heads)
    kt_axes = tuple(range(k.data.ndim - 2)) + (k.data.ndim - 1, k.data.ndim - 2)
    scores = ad.scale(matmul(q, transpose(k, kt_axes)), 1.0 / np.sqrt(dk))
    attn = softmax(scores, axis=-1)
    out = matmul(_merge_heads(matmul(attn, v)), params.wo)
    return out, attn


def multi_head_attention(query, keys, values, params):
    """Scaled dot-product attention over the second-to-last axis."""
    out, _ = _mha_with_weights(query, keys, values, params)
    return out


def query_pool(query, tokens, params):
    """Attend a single learned query over a token set; squeeze to [..., d]."""
    out = multi_head_attention(query, tokens, tokens, params)
    *lead, _, d = out.data.shape
    return reshape(out, (*lead, d))


# ---------------------------------------------------------------------------
# transformer encoder (post-norm residual blocks)


@dataclass
class EncoderLayerParams:
    mha: MhaParams
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    @classmethod
    def init(cls, rng, d, heads, d_ff):
        mha = MhaParams.init(rng, d, heads)
        w1, b1 = linear_params(rng, d, d_ff)
        w2, b2 = linear_params(rng, d_ff, d)
        return cls(
            mha,
            w1,
            b1,
            w2,
            b2,
            ln1_gain=ad.param(np.ones(d)),
            ln1_bias=ad.param(np.zeros(d)),
            ln2_gain=ad.param(np.ones(d)),
            ln2_bias=ad.param(np.zeros(d)),
        )

    def tensors(self):
        return [t for _, t in self.named_tensors()]

    def named_tensors(self):
        named = [(f"mha.{k}", t) for k, t in self.mha.named_tensors()]
        return named + [
            ("w1", self.w1),
            ("b1", self.b1),
            ("w2", self.w2),
            ("b2", self.b2),
            ("ln1_gain", self.ln1_gain),
            ("ln1_bias", self.ln1_bias),
            ("ln2_gain", self.ln2_gain),
            ("ln2_bias", self.ln2_bias),
        ]


def encode(h, layers):
    """Self-attention encoder: residual + norm after each sublayer."""
    for lp in layers:
        a = multi_head_attention(h, h, h, lp.mha)
        h = layer_norm(h + a, lp.ln1_gain, lp.ln1_bias)
        f = linear(gelu(linear(h, lp.w1, lp.b1)), lp.w2, lp.b2)
        h = layer_norm(h + f, lp.ln2_gain, lp.ln2_bias)
    return h


# ---------------------------------------------------------------------------
# gated fusion of branch summaries


@dataclass
class GateParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    temperature: float
    k: int

    @classmethod
    def init(cls, rng, k, d, hidden, temperature):
        if temperature <= 0:
            raise ConfigError(f"gate temperature must be positive, got {temperature}")
        w1, b1 = linear_params(rng, k * d, hidden)
        w2, b2 = linear_params(rng, hidden, k)
        return cls(w1, b1, w2, b2, temperature=float(temperature), k=k)

    def tensors(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def named_tensors(self):
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]


def fuse_gate(summaries, params):
    """Blend k branch summaries with softmax weights from a small MLP.

    Returns (weights [..., k], fused [..., d], weighted_concat [..., k*d]);
    the weighted pieces feeding both outputs are computed once.
    """
    if len(summaries) != params.k:
        raise ConfigError(f"gate expects {params.k} branches, got {len(summaries)}")
    stacked = concat(summaries, axis=-1)
    logits = linear(gelu(linear(stacked, params.w1, params.b1)), params.w2, params.b2)
    weights = softmax(logits, temperature=params.temperature, axis=-1)
    pieces = [mul(slice_last(weights, j), summaries[j]) for j in range(params.k)]
    fused = pieces[0]
    for piece in pieces[1:]:
        fused = fused + piece
    return weights, fused, concat(pieces, axis=-1)


# ---------------------------------------------------------------------------
# two-layer MLP heads


@dataclass
class HeadParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, rng, d_in, hidden, d_out=1):
        w1, b1 = linear_params(rng, d_in, hidden)
        w2, b2 = linear_params(rng, hidden, d_out)
        return cls(w1, b1, w2, b2)

    def tensors(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def named_tensors(self):
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]


def mlp_head(x, params):
    return linear(gelu(linear(x, params.w1, params.b1)), params.w2, params.b2)
