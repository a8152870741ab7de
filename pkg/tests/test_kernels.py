"""Numba and numpy kernel paths must agree to machine precision."""

import subprocess
import sys

import numpy as np
import pytest

import oracles
from daefusion import _kernels
from daefusion.numerics import rng

needs_numba = pytest.mark.skipif(not _kernels.HAS_NUMBA,
                                 reason="numba not importable")


def _conv_case(seed, h=9, w=7, c=4):
    gen = rng(seed)
    x = gen.normal(size=(h, w, c))
    kernel = gen.normal(size=(3, 3, c))
    bias = gen.normal(size=(c,))
    return x, kernel, bias


@needs_numba
@pytest.mark.parametrize("seed", range(5))
def test_dwconv_paths_agree(seed):
    x, kernel, bias = _conv_case(seed)
    a = _kernels.dwconv3x3_numpy(x, kernel, bias)
    b = _kernels._dwconv3x3_jit(x, kernel, bias)
    assert np.max(np.abs(a - b)) <= 1e-13


@needs_numba
@pytest.mark.parametrize("seed", range(5))
def test_dwconv_grad_paths_agree(seed):
    x, kernel, _ = _conv_case(seed)
    gout = rng(seed + 100).normal(size=x.shape)
    dx_a = _kernels.dwconv3x3_input_grad_numpy(gout, kernel)
    dx_b = _kernels._dwconv3x3_input_grad_jit(gout, kernel)
    dk_a = _kernels.dwconv3x3_kernel_grad_numpy(x, gout)
    dk_b = _kernels._dwconv3x3_kernel_grad_jit(x, gout)
    assert np.max(np.abs(dx_a - dx_b)) <= 1e-13
    assert np.max(np.abs(dk_a - dk_b)) <= 1e-12


@needs_numba
@pytest.mark.parametrize("window,stride,pad", [(7, 4, 3), (2, 2, 0),
                                               (3, 1, 1)])
def test_unfold_fold_paths_agree(window, stride, pad):
    gen = rng(window * 100 + stride)
    image = gen.normal(size=(12, 16, 3))
    a = _kernels.unfold_windows_numpy(image, window, stride, pad)
    b = _kernels._unfold_windows_jit(image, window, stride, pad)
    assert np.array_equal(a, b)
    cols = gen.normal(size=a.shape)
    fa = _kernels.fold_windows_numpy(cols, 12, 16, 3, window, stride, pad)
    fb = _kernels._fold_windows_jit(cols, 12, 16, 3, window, stride, pad)
    assert np.max(np.abs(fa - fb)) <= 1e-13


@needs_numba
@pytest.mark.parametrize("seed", range(5))
def test_hausdorff_paths_agree(seed):
    gen = rng(seed)
    a = gen.uniform(0, 20, size=(17, 2))
    b = gen.uniform(0, 20, size=(11, 2))
    assert _kernels.hausdorff_directed_numpy(a, b) == pytest.approx(
        _kernels.hausdorff_directed_jit_wrapper(a, b), abs=1e-12)


def test_dwconv_matches_list_oracle():
    x, kernel, bias = _conv_case(7, h=5, w=6, c=2)
    want = oracles.dwconv3x3_oracle(x.tolist(), kernel.tolist(),
                                    bias.tolist())
    got = _kernels.dwconv3x3_numpy(x, kernel, bias)
    assert oracles.max_abs_diff(got.tolist(), want) <= 1e-12


def test_unfold_matches_list_oracle():
    gen = rng(8)
    image = gen.normal(size=(8, 8, 2))
    want = oracles.unfold_oracle(image.tolist(), 7, 4, 3)
    got = _kernels.unfold_windows_numpy(image, 7, 4, 3)
    assert oracles.max_abs_diff(got.tolist(), want) <= 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_fold_is_adjoint_of_unfold(seed):
    gen = rng(seed)
    image = gen.normal(size=(8, 12, 3))
    cols = _kernels.unfold_windows(image, 7, 4, 3)
    probe = gen.normal(size=cols.shape)
    lhs = float((cols * probe).sum())
    folded = _kernels.fold_windows(probe, 8, 12, 3, 7, 4, 3)
    rhs = float((image * folded).sum())
    assert lhs == pytest.approx(rhs, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_dwconv_grads_are_adjoints(seed):
    # conv is linear in x (and in kernel) once the bias is zeroed, so the
    # backward kernels must satisfy the transpose identity exactly
    x, kernel, _ = _conv_case(seed, h=6, w=5, c=3)
    zero_bias = np.zeros(3)
    gout = rng(seed + 50).normal(size=x.shape)
    out = _kernels.dwconv3x3(x, kernel, zero_bias)
    lhs = float((out * gout).sum())
    via_x = float((x * _kernels.dwconv3x3_input_grad(gout, kernel)).sum())
    via_k = float((kernel * _kernels.dwconv3x3_kernel_grad(x, gout)).sum())
    assert lhs == pytest.approx(via_x, rel=1e-11)
    assert lhs == pytest.approx(via_k, rel=1e-11)


def test_hausdorff_directed_is_asymmetric():
    a = np.array([[0.0, 0.0]])
    b = np.array([[0.0, 0.0], [3.0, 4.0]])
    assert _kernels.hausdorff_directed(a, b) == 0.0
    assert _kernels.hausdorff_directed(b, a) == 5.0


def _probe_backend(value):
    code = ("import daefusion._kernels as k;"
            "print(k.USE_NUMBA, k.dwconv3x3 is k.dwconv3x3_numpy)")
    return subprocess.run(
        [sys.executable, "-c", code],
        capture_output=True, text=True,
        env={"PATH": "/usr/bin:/bin", "DAEFUSION_BACKEND": value})


def test_backend_env_selects_numpy_path():
    proc = _probe_backend("numpy")
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.split() == ["False", "True"]


@needs_numba
def test_backend_env_selects_numba_path():
    proc = _probe_backend("numba")
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.split() == ["True", "False"]


def test_backend_env_rejects_unknown_value():
    proc = _probe_backend("cuda")
    assert proc.returncode != 0
    assert "DAEFUSION_BACKEND" in proc.stderr