"""Minimal reverse-mode tensor engine.

A Tensor is a dense row-major float64 buffer plus gradient metadata. All
differentiable operations record themselves onto the innermost active Tape;
``Tape.backward`` replays the records in reverse, summing gradients into
every participating tensor. Tapes are kept on a thread-local stack so
independent tapes may run on separate threads without shared state.

Every constructed tensor is checked for finiteness: a NaN/Inf value is a
contract violation and raises NonFiniteError at the point of creation.
"""

import threading
import weakref
import zlib

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NonFiniteError(FloatingPointError):
    """A tensor was constructed with NaN or Inf entries."""


class GradError(RuntimeError):
    """Backward pass invoked in an invalid state."""


_tls = threading.local()


def _tape_stack():
    stack = getattr(_tls, "tapes", None)
    if stack is None:
        stack = []
        _tls.tapes = stack
    return stack


def active_tape():
    """Innermost active tape for this thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 value with optional gradient tracking.

    Data is held as a C-contiguous float64 ndarray. ``requires_grad`` marks
    leaves whose gradients the caller wants; interior tensors produced by
    recorded ops are tracked automatically. ``grad`` is populated (as a
    plain ndarray) by ``Tape.backward``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_traced", "__weakref__")

    def __init__(self, data, requires_grad=False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(
                f"non-finite values in tensor of shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._traced = False
        log = active_alloc_log()
        if log is not None:
            log.record(self, arr.shape, arr.nbytes)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        """The underlying buffer (not a copy)."""
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of operations for one backward pass.

    Use as a context manager; ops executed inside record themselves in
    execution order, which is already a topological order (inputs of any
    record precede it). ``backward(loss)`` seeds d(loss)/d(loss) = 1 and
    accumulates gradients by summation, so a leaf used twice receives the
    sum of both contributions.
    """

    def __init__(self):
        self._records = []
        self._used = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        if popped is not self:
            raise GradError("tape stack corrupted")
        return False

    def record(self, output, inputs, backward_fn):
        """Register op: backward_fn(out_grad) -> per-input gradient arrays."""
        output._traced = True
        self._records.append((output, inputs, backward_fn))

    def __len__(self):
        return len(self._records)

    def backward(self, loss):
        if self._used:
            raise GradError("tape already consumed by a backward pass")
        self._used = True
        if loss.size != 1:
            raise ShapeError("backward requires a scalar loss")
        loss.grad = np.ones_like(loss.data)
        for output, inputs, backward_fn in reversed(self._records):
            gout = output.grad
            if gout is None:
                continue
            grads = backward_fn(gout)
            for inp, g in zip(inputs, grads):
                if g is None:
                    continue
                if not (inp.requires_grad or inp._traced):
                    continue
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += g


def record_op(output, inputs, backward_fn):
    """Record onto the active tape when any input participates in grads."""
    tape = active_tape()
    if tape is None:
        return output
    if any(i.requires_grad or i._traced for i in inputs):
        tape.record(output, inputs, backward_fn)
    return output


# ---------------------------------------------------------------------------
# allocation accounting
# ---------------------------------------------------------------------------

class AllocationLog:
    """Records every tensor allocation inside its context.

    ``events`` is the list of (shape, nbytes) in allocation order.
    ``peak_bytes`` tracks the high-water mark of live logged bytes; tensors
    freed by refcounting release their bytes via a weakref finalizer.
    """

    def __init__(self):
        self.events = []
        self.live_bytes = 0
        self.peak_bytes = 0

    def __enter__(self):
        stack = getattr(_tls, "alloc_logs", None)
        if stack is None:
            stack = []
            _tls.alloc_logs = stack
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tls.alloc_logs.pop()
        return False

    def record(self, tensor, shape, nbytes):
        self.events.append((shape, nbytes))
        self.live_bytes += nbytes
        if self.live_bytes > self.peak_bytes:
            self.peak_bytes = self.live_bytes
        weakref.finalize(tensor, self._release, nbytes)

    def _release(self, nbytes):
        self.live_bytes -= nbytes

    def has_shape(self, shape):
        shape = tuple(shape)
        return any(s == shape for s, _ in self.events)

    def max_event_bytes(self):
        return max((b for _, b in self.events), default=0)


def active_alloc_log():
    stack = getattr(_tls, "alloc_logs", None)
    return stack[-1] if stack else None


# ---------------------------------------------------------------------------
# randomness and initialization
# ---------------------------------------------------------------------------

def rng(seed, key=None):
    """Seedable 64-bit generator (PCG64) used everywhere randomness appears.

    PCG64 is a published, stable algorithm, so fixtures generated from a
    seed are reproducible across implementations of this library.

    ``key`` derives an independent named substream from the same seed.
    Parameter init uses one substream per module, so adding or removing a
    module (an ablation toggle) cannot shift the draws of the others.
    """
    if key is None:
        return np.random.Generator(np.random.PCG64(int(seed)))
    seq = np.random.SeedSequence(int(seed),
                                 spawn_key=(zlib.crc32(key.encode()),))
    return np.random.Generator(np.random.PCG64(seq))


def trunc_normal(gen, shape, std=0.02):
    """Normal(0, std^2) resampled until every draw lies within 2 std."""
    out = gen.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = gen.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out
