"""Finite-difference verification of tape gradients.

``grad_check`` compares the tape gradient of a scalar-valued function
against central differences at every element of the probe tensor and
returns the worst relative error. ``grad_check_sampled`` does the same at
a random subset of elements, which is what whole-model sweeps use (a full
per-element pass over every parameter of even a small model is far more
forward evaluations than a test budget allows).
"""

import numpy as np

from . import ops
from .tensor import Tape, Tensor, rng

DENOM_FLOOR = 1e-8


def _analytic_grad(f, x):
    x.grad = None
    prev = x.requires_grad
    x.requires_grad = True
    try:
        with Tape() as tape:
            y = f(x)
            if y.size != 1:
                raise ValueError("grad_check: f must return a scalar tensor")
            tape.backward(y)
    finally:
        x.requires_grad = prev
    g = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None
    return g


def _central_diff(f, x, flat_index, h):
    flat = x.data.reshape(-1)
    orig = flat[flat_index]
    flat[flat_index] = orig + h
    up = f(x).item()
    flat[flat_index] = orig - h
    down = f(x).item()
    flat[flat_index] = orig
    return (up - down) / (2.0 * h)


def _rel_err(a, b):
    denom = max(abs(a), abs(b), DENOM_FLOOR)
    return abs(a - b) / denom


def grad_check(f, x, h=1e-5):
    """Worst relative error between tape gradient and central differences.

    f: callable Tensor -> scalar Tensor, evaluated both under a tape (for
    the analytic gradient) and without one (for the probes). x is mutated
    in place during probing and restored afterwards.
    """
    analytic = _analytic_grad(f, x).reshape(-1)
    worst = 0.0
    for i in range(x.size):
        numeric = _central_diff(f, x, i, h)
        err = _rel_err(analytic[i], numeric)
        if err > worst:
            worst = err
    return worst


def grad_check_sampled(f, x, h=1e-5, samples=3, gen=None, pick="random"):
    """grad_check at ``samples`` elements of x.

    pick="largest" probes the largest-magnitude analytic entries; central
    differences cannot resolve entries near the roundoff floor eps*|f|/h,
    so deep compositions are checked where the gradient is measurable.
    """
    if gen is None:
        gen = rng(0)
    analytic = _analytic_grad(f, x).reshape(-1)
    k = min(samples, x.size)
    if pick == "largest":
        idx = np.argsort(np.abs(analytic))[-k:]
    else:
        idx = gen.choice(x.size, size=k, replace=False)
    worst = 0.0
    for i in idx:
        numeric = _central_diff(f, x, int(i), h)
        err = _rel_err(analytic[int(i)], numeric)
        if err > worst:
            worst = err
    return worst


# ---------------------------------------------------------------------------
# probe suite: every registered op, one probe per differentiable input
# ---------------------------------------------------------------------------

def _tensor(gen, shape, lo=-1.0, hi=1.0):
    return Tensor(gen.uniform(lo, hi, size=shape))


def _weighted_sum(t, weights):
    return ops.sum_all(ops.mul(t, weights))


def build_op_probes(seed=0):
    """(name, f, x) triples covering each op input. All points are smooth."""
    gen = rng(seed)
    probes = []

    def probe(name, f, x):
        probes.append((name, f, x))

    w = Tensor(gen.normal(0.0, 1.0, size=(4, 3)))
    bias = Tensor(gen.normal(0.0, 1.0, size=(3,)))
    c53 = Tensor(gen.normal(0.0, 1.0, size=(5, 3)))
    c54 = Tensor(gen.normal(0.0, 1.0, size=(5, 4)))
    c45 = Tensor(gen.normal(0.0, 1.0, size=(4, 5)))
    x54 = _tensor(gen, (5, 4))

    probe("matmul/a", lambda t: _weighted_sum(ops.matmul(t, w), c53), _tensor(gen, (5, 4)))
    probe("matmul/b", lambda t: _weighted_sum(ops.matmul(x54, t), c53), _tensor(gen, (4, 3)))
    probe("linear/x", lambda t: _weighted_sum(ops.linear(t, w, bias), c53), _tensor(gen, (5, 4)))
    probe("linear/w", lambda t: _weighted_sum(ops.linear(x54, t, bias), c53), _tensor(gen, (4, 3)))
    probe("linear/b", lambda t: _weighted_sum(ops.linear(x54, w, t), c53), _tensor(gen, (3,)))
    probe("transpose", lambda t: _weighted_sum(ops.transpose(t), c45), _tensor(gen, (5, 4)))

    other = _tensor(gen, (5, 4))
    denom = Tensor(gen.uniform(0.5, 1.5, size=(5, 4)) * gen.choice([-1.0, 1.0], size=(5, 4)))
    probe("add/a", lambda t: _weighted_sum(ops.add(t, other), c54), _tensor(gen, (5, 4)))
    probe("add/b", lambda t: _weighted_sum(ops.add(other, t), c54), _tensor(gen, (5, 4)))
    probe("sub/a", lambda t: _weighted_sum(ops.sub(t, other), c54), _tensor(gen, (5, 4)))
    probe("sub/b", lambda t: _weighted_sum(ops.sub(other, t), c54), _tensor(gen, (5, 4)))
    probe("mul/a", lambda t: _weighted_sum(ops.mul(t, other), c54), _tensor(gen, (5, 4)))
    probe("mul/b", lambda t: _weighted_sum(ops.mul(other, t), c54), _tensor(gen, (5, 4)))
    probe("div/a", lambda t: _weighted_sum(ops.div(t, denom), c54), _tensor(gen, (5, 4)))
    probe("div/b", lambda t: _weighted_sum(ops.div(other, t), c54),
          Tensor(gen.uniform(0.5, 1.5, size=(5, 4))))
    probe("scalar_div/x",
          lambda t: _weighted_sum(ops.scalar_div(t, Tensor([1.3])), c54),
          _tensor(gen, (5, 4)))
    probe("scalar_div/s",
          lambda t: _weighted_sum(ops.scalar_div(other, t), c54),
          Tensor([1.3]))
    probe("affine", lambda t: _weighted_sum(ops.affine(t, -0.7, 0.3), c54), _tensor(gen, (5, 4)))
    probe("log", lambda t: _weighted_sum(ops.log(t), c54), _tensor(gen, (5, 4), 0.2, 2.0))
    probe("clamp", lambda t: _weighted_sum(ops.clamp(t, -0.5, 0.5), c54),
          Tensor(gen.choice([-0.9, -0.2, 0.2, 0.9], size=(5, 4))))
    probe("gelu", lambda t: _weighted_sum(ops.gelu(t), c54), _tensor(gen, (5, 4), -2.0, 2.0))

    probe("sum_all", lambda t: ops.sum_all(t), _tensor(gen, (5, 4)))
    probe("mean_all", lambda t: ops.mean_all(t), _tensor(gen, (5, 4)))
    c4 = Tensor(gen.normal(0.0, 1.0, size=(4,)))
    probe("sum_axis", lambda t: _weighted_sum(ops.sum_axis(t, 0), c4), _tensor(gen, (5, 4)))

    probe("softmax/rows", lambda t: _weighted_sum(ops.softmax(t, 1), c54), _tensor(gen, (5, 4)))
    probe("softmax/cols", lambda t: _weighted_sum(ops.softmax(t, 0), c54), _tensor(gen, (5, 4)))
    probe("l2_normalize", lambda t: _weighted_sum(ops.l2_normalize(t, 0), c54),
          _tensor(gen, (5, 4), 0.5, 1.5))
    gamma = Tensor(gen.uniform(0.5, 1.5, size=(4,)))
    beta = Tensor(gen.normal(0.0, 0.5, size=(4,)))
    probe("layer_norm/x", lambda t: _weighted_sum(ops.layer_norm(t, gamma, beta), c54),
          _tensor(gen, (5, 4)))
    probe("layer_norm/gamma", lambda t: _weighted_sum(ops.layer_norm(x54, t, beta), c54),
          Tensor(gen.uniform(0.5, 1.5, size=(4,))))
    probe("layer_norm/beta", lambda t: _weighted_sum(ops.layer_norm(x54, gamma, t), c54),
          Tensor(gen.normal(0.0, 0.5, size=(4,))))

    c_flat = Tensor(gen.normal(0.0, 1.0, size=(20,)))
    probe("reshape", lambda t: _weighted_sum(ops.reshape(t, (20,)), c_flat), _tensor(gen, (5, 4)))
    c58 = Tensor(gen.normal(0.0, 1.0, size=(5, 8)))
    probe("concat/a", lambda t: _weighted_sum(ops.concat([t, other], 1), c58),
          _tensor(gen, (5, 4)))
    probe("concat/b", lambda t: _weighted_sum(ops.concat([other, t], 1), c58),
          _tensor(gen, (5, 4)))

    c4_12 = Tensor(gen.normal(0.0, 1.0, size=(4, 12)))
    probe("space_to_depth", lambda t: _weighted_sum(ops.space_to_depth(t, (4, 4)), c4_12),
          _tensor(gen, (16, 3)))
    c16_3 = Tensor(gen.normal(0.0, 1.0, size=(16, 3)))
    probe("depth_to_space", lambda t: _weighted_sum(ops.depth_to_space(t, (2, 2), 2), c16_3),
          _tensor(gen, (4, 12)))

    kern = Tensor(gen.normal(0.0, 0.5, size=(3, 3, 3)))
    dwb = Tensor(gen.normal(0.0, 0.5, size=(3,)))
    x_tok = _tensor(gen, (16, 3))
    c_tok = Tensor(gen.normal(0.0, 1.0, size=(16, 3)))
    probe("dwconv3x3/x", lambda t: _weighted_sum(ops.dwconv3x3(t, (4, 4), kern, dwb), c_tok),
          _tensor(gen, (16, 3)))
    probe("dwconv3x3/kernel",
          lambda t: _weighted_sum(ops.dwconv3x3(x_tok, (4, 4), t, dwb), c_tok),
          Tensor(gen.normal(0.0, 0.5, size=(3, 3, 3))))
    probe("dwconv3x3/bias",
          lambda t: _weighted_sum(ops.dwconv3x3(x_tok, (4, 4), kern, t), c_tok),
          Tensor(gen.normal(0.0, 0.5, size=(3,))))

    c_unf = Tensor(gen.normal(0.0, 1.0, size=(4, 18)))
    probe("unfold", lambda t: _weighted_sum(ops.unfold(t, 3, 2, 1), c_unf),
          _tensor(gen, (4, 4, 2)))

    return probes


def run_op_suite(seed=0, h=1e-5):
    """[(name, worst_rel_err)] over the whole probe suite."""
    return [(name, grad_check(f, x, h)) for name, f, x in build_op_probes(seed)]
