"""Attention kernels over token matrices.

All kernels take already-projected query/key/value matrices with tokens as
rows. ``standard_attention`` materializes the full token-token weight
matrix (quadratic in n and kept as the reference/baseline); the other
kernels only ever build global d x d context matrices, so their cost and
memory stay linear in the token count.
"""

from dataclasses import dataclass
from math import sqrt
from typing import Optional

import numpy as np

from .numerics import ShapeError, Tensor, trunc_normal
from .numerics import ops


@dataclass
class AttentionParams:
    """Projection matrices for one attention stage (bias-free).

    tau is the learnable positive temperature used only by the channel
    (transpose) stage.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    tau: Optional[Tensor] = None

    def tensors(self):
        named = [("w_q", self.w_q), ("w_k", self.w_k), ("w_v", self.w_v)]
        if self.tau is not None:
            named.append(("tau", self.tau))
        return named


def init_attention_params(gen, d, d_k=None, d_v=None, with_tau=False, std=0.02):
    """Truncated-normal projections; d_k defaults to d/2 and d_v to d."""
    if d_k is None:
        d_k = d // 2
    if d_v is None:
        d_v = d
    return AttentionParams(
        w_q=Tensor(trunc_normal(gen, (d, d_k), std), requires_grad=True),
        w_k=Tensor(trunc_normal(gen, (d, d_k), std), requires_grad=True),
        w_v=Tensor(trunc_normal(gen, (d, d_v), std), requires_grad=True),
        tau=Tensor([1.0], requires_grad=True) if with_tau else None,
    )


def _check_qkv(q, k, v):
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise ShapeError("attention operands must be 2-D token matrices")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"query width {q.shape[1]} != key width {k.shape[1]}")
    if not (q.shape[0] == k.shape[0] == v.shape[0]):
        raise ShapeError(f"token counts differ: q {q.shape[0]}, "
                         f"k {k.shape[0]}, v {v.shape[0]}")


def standard_attention(q, k, v):
    """softmax(q k^T / sqrt(d_k)) v with row-wise softmax."""
    _check_qkv(q, k, v)
    scale = 1.0 / sqrt(q.shape[1])
    scores = ops.affine(ops.matmul(q, ops.transpose(k)), scale)
    weights = ops.softmax(scores, axis=1)
    return ops.matmul(weights, v)


def efficient_attention(q, k, v):
    """Global-context attention: rho_q(q) (rho_k(k)^T v).

    rho_q is a softmax over the channel axis (each query row sums to 1),
    rho_k over the token axis (each key column sums to 1). The context
    rho_k(k)^T v is d_k x d_v, so no n x n buffer ever exists.
    """
    _check_qkv(q, k, v)
    rho_q = ops.softmax(q, axis=1)
    rho_k = ops.softmax(k, axis=0)
    context = ops.matmul(ops.transpose(rho_k), v)
    return ops.matmul(rho_q, context)


def transpose_attention(q, k, v, tau):
    """Channel attention v @ softmax(k^T q / tau).

    q, k, v are all n x d; q and k are l2-normalized along the token axis
    (each length-n channel vector to unit norm), the d x d score matrix is
    softmaxed over each column, and tau is a learnable positive scalar.
    """
    _check_qkv(q, k, v)
    if q.shape != k.shape or k.shape != v.shape:
        raise ShapeError("transpose attention requires equal q/k/v shapes, "
                         f"got {q.shape}/{k.shape}/{v.shape}")
    if tau.size != 1:
        raise ShapeError(f"tau must be scalar, got shape {tau.shape}")
    if tau.data.reshape(-1)[0] <= 0.0:
        raise ValueError("tau must be positive")
    qn = ops.l2_normalize(q, axis=0)
    kn = ops.l2_normalize(k, axis=0)
    scores = ops.scalar_div(ops.matmul(ops.transpose(kn), qn), tau)
    coef = ops.softmax(scores, axis=0)
    return ops.matmul(v, coef)


@dataclass
class SccaParams:
    """Skip-connection cross attention parameters at skip width d2.

    fc scales the incoming decoder feature to d2 (with bias); the q/k/v
    projections are bias-free squares d2 x d2.
    """

    fc_w: Tensor
    fc_b: Tensor
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor

    def tensors(self):
        return [("fc_w", self.fc_w), ("fc_b", self.fc_b),
                ("w_q", self.w_q), ("w_k", self.w_k), ("w_v", self.w_v)]


def init_scca_params(gen, d1, d2, std=0.02):
    return SccaParams(
        fc_w=Tensor(trunc_normal(gen, (d1, d2), std), requires_grad=True),
        fc_b=Tensor(np.zeros(d2), requires_grad=True),
        w_q=Tensor(trunc_normal(gen, (d2, d2), std), requires_grad=True),
        w_k=Tensor(trunc_normal(gen, (d2, d2), std), requires_grad=True),
        w_v=Tensor(trunc_normal(gen, (d2, d2), std), requires_grad=True),
    )


def scca(x1, x2, params, use_eq2_order=False):
    """Cross attention fusing a decoder feature with a skip feature.

    x1 (n, d1) is the decoder feature used for keys/values after scaling
    to the skip width; x2 (n, d2) is the skip feature used for queries.
    The default composition is rho_v(V) (rho_k(K^T) Q): values softmaxed
    over channels, keys over tokens, queries entering the d2 x d2 context
    raw. ``use_eq2_order`` switches to the global-context ordering
    rho_q(Q) (rho_k(K)^T V). Output is concat(attended, x2), width 2*d2;
    the caller owns the 2*d2 -> d2 projection.
    """
    if x1.ndim != 2 or x2.ndim != 2 or x1.shape[0] != x2.shape[0]:
        raise ShapeError(f"scca: token counts differ, {x1.shape} vs {x2.shape}")
    if params.fc_w.shape != (x1.shape[1], x2.shape[1]):
        raise ShapeError(f"scca: fc maps {params.fc_w.shape}, need "
                         f"({x1.shape[1]}, {x2.shape[1]})")
    scaled = ops.linear(x1, params.fc_w, params.fc_b)
    k = ops.matmul(scaled, params.w_k)
    v = ops.matmul(scaled, params.w_v)
    q = ops.matmul(x2, params.w_q)
    if use_eq2_order:
        rho_q = ops.softmax(q, axis=1)
        rho_k = ops.softmax(k, axis=0)
        attended = ops.matmul(rho_q, ops.matmul(ops.transpose(rho_k), v))
    else:
        rho_v = ops.softmax(v, axis=1)
        rho_kt = ops.transpose(ops.softmax(k, axis=0))
        attended = ops.matmul(rho_v, ops.matmul(rho_kt, q))
    return ops.concat([attended, x2], axis=1)
