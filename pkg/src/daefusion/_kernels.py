"""Loop-heavy array kernels with numba acceleration and pure-numpy fallbacks.

Every kernel exists twice: a ``*_numpy`` reference implementation and, when
numba is importable, a jitted twin. The public names dispatch according to
the ``DAEFUSION_BACKEND`` environment variable:

    auto   use numba when available, numpy otherwise (default)
    numba  force numba (falls back with a warning if numba is missing)
    numpy  force the pure-numpy path

Both paths are exercised by the test suite and compared by
``benchmarks/bench_kernels.py``. Only genuinely loop-bound work lives here;
matmul-dominated code stays on BLAS-backed numpy.
"""

import os
import warnings

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return wrap


_BACKEND = os.environ.get("DAEFUSION_BACKEND", "auto").strip().lower()
if _BACKEND not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"DAEFUSION_BACKEND must be auto, numba or numpy, got {_BACKEND!r}"
    )
if _BACKEND == "numba" and not HAS_NUMBA:
    warnings.warn("DAEFUSION_BACKEND=numba but numba is not importable; "
                  "using the pure-numpy kernels")

USE_NUMBA = HAS_NUMBA and _BACKEND != "numpy"


# ---------------------------------------------------------------------------
# depth-wise 3x3 convolution on an (H, W, C) grid, zero padding 1, stride 1
# ---------------------------------------------------------------------------

def dwconv3x3_numpy(x, kernel, bias):
    """Per-channel 3x3 convolution. x (H,W,C), kernel (3,3,C), bias (C)."""
    h, w, c = x.shape
    xp = np.zeros((h + 2, w + 2, c), dtype=x.dtype)
    xp[1:-1, 1:-1, :] = x
    out = np.empty_like(x)
    out[...] = bias
    for di in range(3):
        for dj in range(3):
            out += xp[di:di + h, dj:dj + w, :] * kernel[di, dj, :]
    return out


def dwconv3x3_input_grad_numpy(gout, kernel):
    h, w, c = gout.shape
    gp = np.zeros((h + 2, w + 2, c), dtype=gout.dtype)
    gp[1:-1, 1:-1, :] = gout
    dx = np.zeros_like(gout)
    for di in range(3):
        for dj in range(3):
            dx += gp[2 - di:2 - di + h, 2 - dj:2 - dj + w, :] * kernel[di, dj, :]
    return dx


def dwconv3x3_kernel_grad_numpy(x, gout):
    h, w, c = x.shape
    xp = np.zeros((h + 2, w + 2, c), dtype=x.dtype)
    xp[1:-1, 1:-1, :] = x
    dk = np.empty((3, 3, c), dtype=x.dtype)
    for di in range(3):
        for dj in range(3):
            dk[di, dj, :] = (xp[di:di + h, dj:dj + w, :] * gout).sum(axis=(0, 1))
    return dk


@njit(cache=True)
def _dwconv3x3_jit(x, kernel, bias):
    h, w, c = x.shape
    out = np.empty((h, w, c), dtype=x.dtype)
    for i in range(h):
        for j in range(w):
            for ch in range(c):
                acc = bias[ch]
                for di in range(3):
                    ii = i + di - 1
                    if ii < 0 or ii >= h:
                        continue
                    for dj in range(3):
                        jj = j + dj - 1
                        if 0 <= jj < w:
                            acc += x[ii, jj, ch] * kernel[di, dj, ch]
                out[i, j, ch] = acc
    return out


@njit(cache=True)
def _dwconv3x3_input_grad_jit(gout, kernel):
    h, w, c = gout.shape
    dx = np.zeros((h, w, c), dtype=gout.dtype)
    for i in range(h):
        for j in range(w):
            for ch in range(c):
                acc = 0.0
                for di in range(3):
                    ii = i + 1 - di
                    if ii < 0 or ii >= h:
                        continue
                    for dj in range(3):
                        jj = j + 1 - dj
                        if 0 <= jj < w:
                            acc += gout[ii, jj, ch] * kernel[di, dj, ch]
                dx[i, j, ch] = acc
    return dx


@njit(cache=True)
def _dwconv3x3_kernel_grad_jit(x, gout):
    h, w, c = x.shape
    dk = np.zeros((3, 3, c), dtype=x.dtype)
    for i in range(h):
        for j in range(w):
            for di in range(3):
                ii = i + di - 1
                if ii < 0 or ii >= h:
                    continue
                for dj in range(3):
                    jj = j + dj - 1
                    if 0 <= jj < w:
                        for ch in range(c):
                            dk[di, dj, ch] += x[ii, jj, ch] * gout[i, j, ch]
    return dk


# ---------------------------------------------------------------------------
# overlapping sliding-window unfold / fold (im2col / col2im)
# ---------------------------------------------------------------------------
# Token t = (ti, tj) in row-major output-grid order; within a token the
# values are ordered (wi, wj, channel) row-major, so column index is
# (wi * window + wj) * C + c. fold_windows is the exact adjoint (scatter-add).

def unfold_windows_numpy(image, window, stride, pad):
    h, w, c = image.shape
    hp, wp = h + 2 * pad, w + 2 * pad
    padded = np.zeros((hp, wp, c), dtype=image.dtype)
    padded[pad:pad + h, pad:pad + w, :] = image
    ho = (hp - window) // stride + 1
    wo = (wp - window) // stride + 1
    cols = np.empty((ho, wo, window, window, c), dtype=image.dtype)
    for wi in range(window):
        for wj in range(window):
            cols[:, :, wi, wj, :] = padded[
                wi:wi + stride * (ho - 1) + 1:stride,
                wj:wj + stride * (wo - 1) + 1:stride, :]
    return cols.reshape(ho * wo, window * window * c)


def fold_windows_numpy(cols, h, w, c, window, stride, pad):
    hp, wp = h + 2 * pad, w + 2 * pad
    ho = (hp - window) // stride + 1
    wo = (wp - window) // stride + 1
    blocks = cols.reshape(ho, wo, window, window, c)
    padded = np.zeros((hp, wp, c), dtype=cols.dtype)
    for wi in range(window):
        for wj in range(window):
            padded[wi:wi + stride * (ho - 1) + 1:stride,
                   wj:wj + stride * (wo - 1) + 1:stride, :] += blocks[:, :, wi, wj, :]
    return padded[pad:pad + h, pad:pad + w, :]


@njit(cache=True)
def _unfold_windows_jit(image, window, stride, pad):
    h, w, c = image.shape
    ho = (h + 2 * pad - window) // stride + 1
    wo = (w + 2 * pad - window) // stride + 1
    cols = np.zeros((ho * wo, window * window * c), dtype=image.dtype)
    for ti in range(ho):
        for tj in range(wo):
            t = ti * wo + tj
            for wi in range(window):
                ii = ti * stride + wi - pad
                if ii < 0 or ii >= h:
                    continue
                for wj in range(window):
                    jj = tj * stride + wj - pad
                    if 0 <= jj < w:
                        base = (wi * window + wj) * c
                        for ch in range(c):
                            cols[t, base + ch] = image[ii, jj, ch]
    return cols


@njit(cache=True)
def _fold_windows_jit(cols, h, w, c, window, stride, pad):
    ho = (h + 2 * pad - window) // stride + 1
    wo = (w + 2 * pad - window) // stride + 1
    out = np.zeros((h, w, c), dtype=cols.dtype)
    for ti in range(ho):
        for tj in range(wo):
            t = ti * wo + tj
            for wi in range(window):
                ii = ti * stride + wi - pad
                if ii < 0 or ii >= h:
                    continue
                for wj in range(window):
                    jj = tj * stride + wj - pad
                    if 0 <= jj < w:
                        base = (wi * window + wj) * c
                        for ch in range(c):
                            out[ii, jj, ch] += cols[t, base + ch]
    return out


# ---------------------------------------------------------------------------
# directed Hausdorff distance between two point sets
# ---------------------------------------------------------------------------

def hausdorff_directed_numpy(a, b):
    """max over a of min over b of euclidean distance. a (Na,2), b (Nb,2)."""
    diff = a[:, None, :] - b[None, :, :]
    d2 = (diff * diff).sum(axis=2)
    return float(np.sqrt(d2.min(axis=1)).max())


@njit(cache=True)
def _hausdorff_directed_jit(a, b):
    worst = 0.0
    for i in range(a.shape[0]):
        best = np.inf
        for j in range(b.shape[0]):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            d2 = dx * dx + dy * dy
            if d2 < best:
                best = d2
        if best > worst:
            worst = best
    return np.sqrt(worst)


def hausdorff_directed_jit_wrapper(a, b):
    return float(_hausdorff_directed_jit(a, b))


if USE_NUMBA:
    dwconv3x3 = _dwconv3x3_jit
    dwconv3x3_input_grad = _dwconv3x3_input_grad_jit
    dwconv3x3_kernel_grad = _dwconv3x3_kernel_grad_jit
    unfold_windows = _unfold_windows_jit
    fold_windows = _fold_windows_jit
    hausdorff_directed = hausdorff_directed_jit_wrapper
else:
    dwconv3x3 = dwconv3x3_numpy
    dwconv3x3_input_grad = dwconv3x3_input_grad_numpy
    dwconv3x3_kernel_grad = dwconv3x3_kernel_grad_numpy
    unfold_windows = unfold_windows_numpy
    fold_windows = fold_windows_numpy
    hausdorff_directed = hausdorff_directed_numpy
