"""Differentiable operations on the tensor engine.

Each op validates its operand shapes, computes the forward value with
numpy, and registers a backward rule on the active tape. Backward rules
return one gradient array per input (None for non-differentiable slots).
Broadcasting is restricted to exactly what these signatures state.
"""

import numpy as np
from scipy.special import erf

from .. import _kernels
from .tensor import ShapeError, Tensor, record_op

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _need(t):
    return t.requires_grad or t._traced


def _same_shape(a, b, name):
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    """2-D matrix product (n,k) @ (k,m) -> (n,m)."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    need_a, need_b = _need(a), _need(b)

    def backward(g):
        ga = g @ b.data.T if need_a else None
        gb = a.data.T @ g if need_b else None
        return ga, gb

    return record_op(out, (a, b), backward)


def linear(x, w, b=None):
    """x @ w + b with x (n,k), w (k,m), optional bias b (m,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: incompatible {x.shape} @ {w.shape}")
    y = x.data @ w.data
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias shape {b.shape} != ({w.shape[1]},)")
        y = y + b.data
    out = Tensor(y)
    need_x, need_w = _need(x), _need(w)

    def backward(g):
        gx = g @ w.data.T if need_x else None
        gw = x.data.T @ g if need_w else None
        gb = g.sum(axis=0) if b is not None else None
        if b is None:
            return gx, gw
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return record_op(out, inputs, backward)


def transpose(x):
    """2-D transpose."""
    if x.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got {x.shape}")
    out = Tensor(x.data.T)

    def backward(g):
        return (g.T,)

    return record_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    _same_shape(a, b, "add")
    out = Tensor(a.data + b.data)

    def backward(g):
        return g, g

    return record_op(out, (a, b), backward)


def sub(a, b):
    _same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)

    def backward(g):
        return g, -g

    return record_op(out, (a, b), backward)


def mul(a, b):
    _same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)

    def backward(g):
        return g * b.data, g * a.data

    return record_op(out, (a, b), backward)


def div(a, b):
    _same_shape(a, b, "div")
    out = Tensor(a.data / b.data)

    def backward(g):
        return g / b.data, -g * a.data / (b.data * b.data)

    return record_op(out, (a, b), backward)


def scalar_div(x, s):
    """Divide a tensor by a scalar tensor (size 1), e.g. a temperature."""
    if s.size != 1:
        raise ShapeError(f"scalar_div: divisor must be scalar, got {s.shape}")
    sval = s.data.reshape(-1)[0]
    out = Tensor(x.data / sval)

    def backward(g):
        gx = g / sval
        gs = np.full_like(s.data, -(g * x.data).sum() / (sval * sval))
        return gx, gs

    return record_op(out, (x, s), backward)


def affine(x, scale, shift=0.0):
    """scale * x + shift with python-float constants."""
    out = Tensor(scale * x.data + shift)

    def backward(g):
        return (scale * g,)

    return record_op(out, (x,), backward)


def log(x):
    out = Tensor(np.log(x.data))

    def backward(g):
        return (g / x.data,)

    return record_op(out, (x,), backward)


def clamp(x, lo=None, hi=None):
    """Clip values into [lo, hi]; gradient passes only inside the bounds."""
    if lo is None and hi is None:
        raise ValueError("clamp: need at least one bound")
    out = Tensor(np.clip(x.data, lo, hi))
    inside = np.ones(x.shape, dtype=bool)
    if lo is not None:
        inside &= x.data >= lo
    if hi is not None:
        inside &= x.data <= hi

    def backward(g):
        return (g * inside,)

    return record_op(out, (x,), backward)


def gelu_grad(x):
    """d/dx of x * Phi(x): Phi(x) + x * phi(x)."""
    phi = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return cdf + x * phi


def gelu(x):
    """Exact gaussian-error-linear unit x * Phi(x)."""
    out = Tensor(x.data * 0.5 * (1.0 + erf(x.data * _INV_SQRT2)))

    def backward(g):
        return (g * gelu_grad(x.data),)

    return record_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_all(x):
    out = Tensor(x.data.sum().reshape(()))

    def backward(g):
        return (np.full_like(x.data, g.reshape(-1)[0]),)

    return record_op(out, (x,), backward)


def mean_all(x):
    out = Tensor(x.data.mean().reshape(()))
    inv = 1.0 / x.size

    def backward(g):
        return (np.full_like(x.data, g.reshape(-1)[0] * inv),)

    return record_op(out, (x,), backward)


def sum_axis(x, axis):
    out = Tensor(x.data.sum(axis=axis))

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return record_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# normalizations
# ---------------------------------------------------------------------------

def softmax(x, axis):
    """Shift-stabilized softmax along one axis."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return record_op(out, (x,), backward)


def l2_normalize(x, axis, eps=1e-12):
    """Each slice along ``axis`` divided by max(||slice||_2, eps)."""
    norms = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    denom = np.maximum(norms, eps)
    y = x.data / denom
    out = Tensor(y)
    live = norms > eps

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - np.where(live, y * dot, 0.0)) / denom,)

    return record_op(out, (x,), backward)


def layer_norm(x, gamma, beta, eps=1e-6):
    """Row-wise standardization of (n,d) with learnable scale and shift."""
    if x.ndim != 2:
        raise ShapeError(f"layer_norm: expected 2-D, got {x.shape}")
    d = x.shape[1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError("layer_norm: gamma/beta must have shape "
                         f"({d},), got {gamma.shape} and {beta.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data)

    def backward(g):
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        dxhat = g * gamma.data
        dx = (dxhat - dxhat.mean(axis=1, keepdims=True)
              - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)) * inv
        return dx, dgamma, dbeta

    return record_op(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(x, shape):
    out = Tensor(x.data.reshape(shape))

    def backward(g):
        return (g.reshape(x.shape),)

    return record_op(out, (x,), backward)


def concat(tensors, axis):
    if not tensors:
        raise ShapeError("concat: no inputs")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p)
                     for p in np.split(g, splits, axis=axis))

    return record_op(out, tuple(tensors), backward)


def space_to_depth(x, grid):
    """Concatenate each 2x2 token neighborhood: (n,d) -> (n/4, 4d).

    Tokens are row-major over ``grid``; the four neighbors are ordered
    top-left, top-right, bottom-left, bottom-right.
    """
    h, w = grid
    n, d = x.shape
    if n != h * w:
        raise ShapeError(f"space_to_depth: {n} tokens != grid {h}x{w}")
    if h % 2 or w % 2:
        raise ShapeError(f"space_to_depth: odd grid {h}x{w}")
    y = (x.data.reshape(h // 2, 2, w // 2, 2, d)
         .transpose(0, 2, 1, 3, 4)
         .reshape(n // 4, 4 * d))
    out = Tensor(y)

    def backward(g):
        back = (g.reshape(h // 2, w // 2, 2, 2, d)
                .transpose(0, 2, 1, 3, 4)
                .reshape(n, d))
        return (np.ascontiguousarray(back),)

    return record_op(out, (x,), backward)


def depth_to_space(x, grid, factor):
    """Spread channel groups onto a finer grid: (n, f*f*w) -> (n*f*f, w).

    Channel chunk k (row-major over (fi, fj)) lands on subgrid offset
    (fi, fj); the output grid is (H*f, W*f).
    """
    h, w = grid
    n, dtot = x.shape
    if n != h * w:
        raise ShapeError(f"depth_to_space: {n} tokens != grid {h}x{w}")
    if dtot % (factor * factor):
        raise ShapeError(
            f"depth_to_space: width {dtot} not divisible by {factor}^2")
    width = dtot // (factor * factor)
    y = (x.data.reshape(h, w, factor, factor, width)
         .transpose(0, 2, 1, 3, 4)
         .reshape(n * factor * factor, width))
    out = Tensor(y)

    def backward(g):
        back = (g.reshape(h, factor, w, factor, width)
                .transpose(0, 2, 1, 3, 4)
                .reshape(n, dtot))
        return (np.ascontiguousarray(back),)

    return record_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# grid convolutions and windowing
# ---------------------------------------------------------------------------

def dwconv3x3(x, grid, kernel, bias):
    """Depth-wise 3x3 conv over tokens laid out on ``grid``.

    x (n,d) with n = H*W, kernel (3,3,d), bias (d,). Zero padding 1,
    stride 1, so the token count is preserved.
    """
    h, w = grid
    n, d = x.shape
    if n != h * w:
        raise ShapeError(f"dwconv3x3: {n} tokens != grid {h}x{w}")
    if kernel.shape != (3, 3, d) or bias.shape != (d,):
        raise ShapeError(f"dwconv3x3: kernel {kernel.shape} bias {bias.shape} "
                         f"for width {d}")
    xg = x.data.reshape(h, w, d)
    out = Tensor(_kernels.dwconv3x3(xg, kernel.data, bias.data).reshape(n, d))

    def backward(g):
        gg = g.reshape(h, w, d)
        dx = _kernels.dwconv3x3_input_grad(gg, kernel.data).reshape(n, d)
        dk = _kernels.dwconv3x3_kernel_grad(xg, gg)
        db = gg.sum(axis=(0, 1))
        return dx, dk, db

    return record_op(out, (x, kernel, bias), backward)


def unfold(image, window, stride, pad):
    """Sliding-window extraction: (H,W,C) -> (n_tokens, window*window*C)."""
    if image.ndim != 3:
        raise ShapeError(f"unfold: expected (H,W,C), got {image.shape}")
    h, w, c = image.shape
    if h + 2 * pad < window or w + 2 * pad < window:
        raise ShapeError(f"unfold: window {window} exceeds padded {h}x{w} "
                         f"image (pad {pad})")
    out = Tensor(_kernels.unfold_windows(image.data, window, stride, pad))

    def backward(g):
        return (_kernels.fold_windows(g, h, w, c, window, stride, pad),)

    return record_op(out, (image,), backward)
