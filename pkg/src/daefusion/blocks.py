"""Transformer blocks: Mix-FFN and the dual attention block variants.

A block couples one spatial (efficient) attention stage with one channel
(transpose) attention stage. The sequential composition interleaves them
with Mix-FFN stages; the three parallel variants differ in how the two
branch outputs are fused. All variants preserve the (n, d) token shape.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from .attention import (AttentionParams, efficient_attention,
                        init_attention_params, transpose_attention)
from .numerics import ShapeError, Tensor, trunc_normal
from .numerics import ops


@dataclass
class TokenMap:
    """Token matrix (n, d) plus the (H, W) grid it was flattened from."""

    tokens: Tensor
    grid: Tuple[int, int]

    def __post_init__(self):
        h, w = self.grid
        if self.tokens.ndim != 2 or self.tokens.shape[0] != h * w:
            raise ShapeError(
                f"token map {self.tokens.shape} does not match grid {h}x{w}")

    @property
    def width(self):
        return self.tokens.shape[1]


class DualStrategy(str, Enum):
    SEQUENTIAL = "sequential"
    SIMPLE_ADDITIVE = "simple_additive"
    COMPLEX_ADDITIVE = "complex_additive"
    CONCATENATION = "concatenation"


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor

    def tensors(self):
        return [("gamma", self.gamma), ("beta", self.beta)]


def init_layer_norm_params(d):
    return LayerNormParams(
        gamma=Tensor(np.ones(d), requires_grad=True),
        beta=Tensor(np.zeros(d), requires_grad=True),
    )


@dataclass
class FfnParams:
    """Mix-FFN: expand FC, depth-wise 3x3 kernel per channel, contract FC."""

    fc1_w: Tensor
    fc1_b: Tensor
    dw_kernel: Tensor
    dw_bias: Tensor
    fc2_w: Tensor
    fc2_b: Tensor

    def tensors(self):
        return [("fc1_w", self.fc1_w), ("fc1_b", self.fc1_b),
                ("dw_kernel", self.dw_kernel), ("dw_bias", self.dw_bias),
                ("fc2_w", self.fc2_w), ("fc2_b", self.fc2_b)]


def init_ffn_params(gen, d_in, d_out, inner, std=0.02):
    return FfnParams(
        fc1_w=Tensor(trunc_normal(gen, (d_in, inner), std), requires_grad=True),
        fc1_b=Tensor(np.zeros(inner), requires_grad=True),
        dw_kernel=Tensor(trunc_normal(gen, (3, 3, inner), std), requires_grad=True),
        dw_bias=Tensor(np.zeros(inner), requires_grad=True),
        fc2_w=Tensor(trunc_normal(gen, (inner, d_out), std), requires_grad=True),
        fc2_b=Tensor(np.zeros(d_out), requires_grad=True),
    )


def mix_ffn(x, params):
    """FC -> depth-wise 3x3 conv on the token grid -> GELU -> FC."""
    hidden = ops.linear(x.tokens, params.fc1_w, params.fc1_b)
    hidden = ops.dwconv3x3(hidden, x.grid, params.dw_kernel, params.dw_bias)
    hidden = ops.gelu(hidden)
    out = ops.linear(hidden, params.fc2_w, params.fc2_b)
    return TokenMap(out, x.grid)


@dataclass
class BlockParams:
    """Parameters of one dual attention block at width d.

    attn_e drives the efficient stage (d_k = d/2, d_v = d); attn_t drives
    the channel stage (square projections plus tau). Which of the norm/FFN
    fields are populated depends on the fusion strategy:

      sequential:       ln1/ffn1 and ln2/ffn2 (interleaved stages)
      simple_additive:  none (bare branch sum plus residual)
      complex_additive: ln_e/ffn_e, ln_t/ffn_t per branch, ln2/ffn2 trailing
      concatenation:    ln_e, ln_t, ffn_cat (2d -> d), ln_cat, ln2/ffn2
    """

    strategy: DualStrategy
    attn_e: AttentionParams
    attn_t: AttentionParams
    ln1: Optional[LayerNormParams] = None
    ffn1: Optional[FfnParams] = None
    ln2: Optional[LayerNormParams] = None
    ffn2: Optional[FfnParams] = None
    ln_e: Optional[LayerNormParams] = None
    ffn_e: Optional[FfnParams] = None
    ln_t: Optional[LayerNormParams] = None
    ffn_t: Optional[FfnParams] = None
    ffn_cat: Optional[FfnParams] = None
    ln_cat: Optional[LayerNormParams] = None

    def groups(self):
        """(name, param-object) pairs in deterministic order, present only."""
        candidates = [
            ("attn_e", self.attn_e), ("attn_t", self.attn_t),
            ("ln1", self.ln1), ("ffn1", self.ffn1),
            ("ln_e", self.ln_e), ("ffn_e", self.ffn_e),
            ("ln_t", self.ln_t), ("ffn_t", self.ffn_t),
            ("ffn_cat", self.ffn_cat), ("ln_cat", self.ln_cat),
            ("ln2", self.ln2), ("ffn2", self.ffn2),
        ]
        return [(n, p) for n, p in candidates if p is not None]

    def tensors(self):
        out = []
        for gname, group in self.groups():
            out.extend((f"{gname}.{tname}", t) for tname, t in group.tensors())
        return out


def init_block_params(gen, d, strategy=DualStrategy.SEQUENTIAL, expansion=4):
    strategy = DualStrategy(strategy)
    if d % 2:
        raise ShapeError(f"block width must be even, got {d}")
    p = BlockParams(
        strategy=strategy,
        attn_e=init_attention_params(gen, d),
        attn_t=init_attention_params(gen, d, d_k=d, d_v=d, with_tau=True),
    )
    inner = expansion * d
    if strategy is DualStrategy.SEQUENTIAL:
        p.ln1 = init_layer_norm_params(d)
        p.ffn1 = init_ffn_params(gen, d, d, inner)
        p.ln2 = init_layer_norm_params(d)
        p.ffn2 = init_ffn_params(gen, d, d, inner)
    elif strategy is DualStrategy.COMPLEX_ADDITIVE:
        p.ln_e = init_layer_norm_params(d)
        p.ffn_e = init_ffn_params(gen, d, d, inner)
        p.ln_t = init_layer_norm_params(d)
        p.ffn_t = init_ffn_params(gen, d, d, inner)
        p.ln2 = init_layer_norm_params(d)
        p.ffn2 = init_ffn_params(gen, d, d, inner)
    elif strategy is DualStrategy.CONCATENATION:
        p.ln_e = init_layer_norm_params(d)
        p.ln_t = init_layer_norm_params(d)
        p.ffn_cat = init_ffn_params(gen, 2 * d, d, expansion * 2 * d)
        p.ln_cat = init_layer_norm_params(d)
        p.ln2 = init_layer_norm_params(d)
        p.ffn2 = init_ffn_params(gen, d, d, inner)
    return p


def block_param_count(params):
    return sum(t.size for _, t in params.tensors())


def _efficient_stage(tokens, attn):
    q = ops.matmul(tokens, attn.w_q)
    k = ops.matmul(tokens, attn.w_k)
    v = ops.matmul(tokens, attn.w_v)
    return efficient_attention(q, k, v)


def _channel_stage(tokens, attn):
    q = ops.matmul(tokens, attn.w_q)
    k = ops.matmul(tokens, attn.w_k)
    v = ops.matmul(tokens, attn.w_v)
    return transpose_attention(q, k, v, attn.tau)


def _norm(tokens, ln):
    return ops.layer_norm(tokens, ln.gamma, ln.beta)


def dual_block_sequential(x, params, literal_t_residual=False):
    """Spatial stage, Mix-FFN, channel stage, Mix-FFN, each with residuals.

    The channel stage consumes m1 + e where m1 is the first Mix-FFN output
    and e the spatial-stage output; by default the same sum is what the
    channel output is added back onto. ``literal_t_residual`` restricts
    that residual to m1 alone (the alternative reading).
    """
    e = ops.add(_efficient_stage(x.tokens, params.attn_e), x.tokens)
    m1 = mix_ffn(TokenMap(_norm(e, params.ln1), x.grid), params.ffn1).tokens
    t_in = ops.add(m1, e)
    t = _channel_stage(t_in, params.attn_t)
    t_blk = ops.add(t, m1 if literal_t_residual else t_in)
    m2 = mix_ffn(TokenMap(_norm(t_blk, params.ln2), x.grid), params.ffn2).tokens
    return TokenMap(ops.add(m2, t_blk), x.grid)


def _simple_additive(x, params):
    branches = ops.add(_efficient_stage(x.tokens, params.attn_e),
                       _channel_stage(x.tokens, params.attn_t))
    return TokenMap(ops.add(branches, x.tokens), x.grid)


def _complex_additive(x, params):
    be = mix_ffn(TokenMap(_norm(_efficient_stage(x.tokens, params.attn_e),
                                params.ln_e), x.grid), params.ffn_e).tokens
    bt = mix_ffn(TokenMap(_norm(_channel_stage(x.tokens, params.attn_t),
                                params.ln_t), x.grid), params.ffn_t).tokens
    a = ops.add(ops.add(be, bt), x.tokens)
    m2 = mix_ffn(TokenMap(_norm(a, params.ln2), x.grid), params.ffn2).tokens
    return TokenMap(ops.add(m2, a), x.grid)


def _concatenation(x, params):
    ce = _norm(_efficient_stage(x.tokens, params.attn_e), params.ln_e)
    ct = _norm(_channel_stage(x.tokens, params.attn_t), params.ln_t)
    cat = ops.concat([ce, ct], axis=1)
    contracted = mix_ffn(TokenMap(cat, x.grid), params.ffn_cat).tokens
    z = _norm(contracted, params.ln_cat)
    m2 = mix_ffn(TokenMap(_norm(z, params.ln2), x.grid), params.ffn2).tokens
    return TokenMap(ops.add(m2, z), x.grid)


def dual_block_variant(x, params, strategy=None):
    """Run a block under its fusion strategy (strategy arg must match)."""
    if strategy is not None and DualStrategy(strategy) is not params.strategy:
        raise ValueError(f"params built for {params.strategy.value}, "
                         f"requested {DualStrategy(strategy).value}")
    s = params.strategy
    if s is DualStrategy.SEQUENTIAL:
        return dual_block_sequential(x, params)
    if s is DualStrategy.SIMPLE_ADDITIVE:
        return _simple_additive(x, params)
    if s is DualStrategy.COMPLEX_ADDITIVE:
        return _complex_additive(x, params)
    return _concatenation(x, params)
