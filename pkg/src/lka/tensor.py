"""Dense float64 tensors with reverse-mode autodiff over a recorded tape.

Every differentiable operation appends one node to a thread-local tape.
Recording order is a topological order of the dataflow graph, so
``backward`` simply walks the tape in reverse, accumulating gradients by
addition into ``.grad`` buffers. The tape is cleared after each backward
pass; gradient buffers on leaf tensors persist until ``zero_grad``.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_state = threading.local()


def _tape() -> list:
    if not hasattr(_state, "tape"):
        _state.tape = []
        _state.enabled = True
    return _state.tape


def is_grad_enabled() -> bool:
    _tape()
    return _state.enabled


@contextmanager
def no_grad():
    """Disable tape recording within the block (forward-only evaluation)."""
    _tape()
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A float64 ndarray plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "requires_grad", "grad", "_from_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._from_op = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def accumulate_grad(self, g: np.ndarray, own: bool = False) -> None:
        """Add g into the grad buffer. ``own=True`` promises g is a freshly
        allocated array that may be adopted as the buffer itself."""
        if self.grad is None:
            self.grad = g if own else g.copy()
        else:
            self.grad += g

    # arithmetic sugar; all routed through the recorded primitives below
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


class _Node:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


def record_op(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap op output in a Tensor, recording a tape node when grads are live.

    ``backward_fn(grad_out)`` must accumulate into each input's ``.grad``
    (via ``accumulate_grad``) for inputs that require gradients.
    """
    out = Tensor(out_data)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._from_op = True
        _tape().append(_Node(out, tuple(inputs), backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Populate gradients of every requires-grad tensor reachable from loss.

    The tape is consumed: recorded nodes are visited exactly once, in
    reverse recording order, and the tape is cleared afterward. Gradients
    of intermediate (op-produced) tensors are released; leaf tensors keep
    their accumulated ``.grad``.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    tape = _tape()
    try:
        if not loss.requires_grad:
            return
        loss.grad = np.ones_like(loss.data)
        for node in reversed(tape):
            g = node.out.grad
            if g is None:
                continue
            node.backward_fn(g)
    finally:
        for node in tape:
            node.out.grad = None
        tape.clear()


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's original shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _acc_unbroadcast(t: Tensor, g: np.ndarray, shape: tuple[int, ...]) -> None:
    r = _unbroadcast(g, shape)
    t.accumulate_grad(r, own=r is not g)


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _acc_unbroadcast(a, g, a.data.shape)
        if b.requires_grad:
            _acc_unbroadcast(b, g, b.data.shape)

    return record_op(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            _acc_unbroadcast(a, g, a.data.shape)
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.data.shape), own=True)

    return record_op(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape), own=True)
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape), own=True)

    return record_op(out, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    out = a.data * c

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * c, own=True)

    return record_op(out, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy's stacked-matmul broadcasting rules."""
    if a.data.ndim == 0 or b.data.ndim == 0:
        raise DimensionError("matmul requires tensors of rank >= 1")
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise DimensionError(
            f"matmul inner extents differ: {a.data.shape} x {b.data.shape}"
        )
    out = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2) if b.data.ndim > 1 else np.outer(g, b.data).reshape(a.data.shape)
            a.accumulate_grad(_unbroadcast(ga, a.data.shape), own=True)
        if b.requires_grad:
            if b.data.ndim == 2 and a.data.ndim > 2:
                # weight-style operand: one big GEMM beats stacked matmul
                gb = a.data.reshape(-1, a.data.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            elif a.data.ndim > 1:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
            else:
                gb = np.outer(a.data, g)
            b.accumulate_grad(gb, own=True)

    return record_op(out, (a, b), bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            r = g.reshape(a.data.shape)
            a.accumulate_grad(r, own=r.base is None)

    return record_op(out, (a,), bwd)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(np.transpose(g, inv))

    return record_op(out, (a,), bwd)


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = np.broadcast_to(a.data, shape).copy()

    def bwd(g):
        if a.requires_grad:
            _acc_unbroadcast(a, g, a.data.shape)

    return record_op(out, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def bwd(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                t.accumulate_grad(p)

    return record_op(out, tuple(tensors), bwd)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = a.data[index].copy()

    def bwd(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[index] = g
            a.accumulate_grad(buf, own=True)

    return record_op(out, (a,), bwd)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if not a.requires_grad:
            return
        if axis is not None:
            axes = axis if isinstance(axis, tuple) else (axis,)
            if not keepdims:
                g = np.expand_dims(g, axes)
        a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy(), own=True)

    return record_op(out, (a,), bwd)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.data.shape[ax] for ax in axes]))
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# verification oracle


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float) -> float:
    """Max relative error between f's analytic gradient and central differences.

    Relative error per element is |analytic - numeric| / max(1, |analytic|).
    A non-finite f output makes the check fail with +inf.
    """
    if h <= 0:
        raise ContractError("finite_diff_check requires h > 0")
    xc = Tensor(x.data.copy(), requires_grad=True)
    y = f(xc)
    if y.data.size != 1:
        raise ContractError("finite_diff_check requires a scalar-valued f")
    finite = bool(np.isfinite(y.data).all())
    backward(y)
    if not finite:
        return float("inf")
    analytic = xc.grad.copy() if xc.grad is not None else np.zeros_like(xc.data)

    worst = 0.0
    flat = xc.data.reshape(-1)
    aflat = analytic.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(f(xc).data.reshape(()))
            flat[i] = orig - h
            lo = float(f(xc).data.reshape(()))
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                return float("inf")
            numeric = (hi - lo) / (2.0 * h)
            err = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]))
            worst = max(worst, err)
    return worst
