"""Reverse-mode automatic differentiation over dense float64 arrays.

A deliberately small kernel: immutable ``Tensor`` values, a handful of
primitives (matrix products, 1D convolutions, elementwise maps, reductions,
row/column plumbing), and a scalar ``backward`` that replays the recorded
operation graph in reverse topological order, visiting each node exactly
once.  Everything runs on the CPU in float64 and is bit-stable across
repeated runs in one process.

``finite_diff`` provides the independent central-difference oracle used to
check every analytic gradient.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .validation import ValidationError, require

__all__ = [
    "Tensor",
    "no_grad",
    "matmul",
    "conv1d",
    "concat_rows",
    "transpose",
    "reshape",
    "slice_cols",
    "take_rows",
    "tile_rows",
    "tile_cols",
    "sum_all",
    "mean_all",
    "sum_axis",
    "sigmoid",
    "tanh",
    "relu",
    "exp_clipped",
    "log",
    "log_floored",
    "maximum_scalar",
    "reciprocal",
    "absolute",
    "softmax",
    "topk_indices",
    "grad",
    "zero_grads",
    "finite_diff",
    "relative_gradient_error",
]

EXP_CLAMP = 10.0

_grad_enabled = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (forward values only)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _check_finite(arr: np.ndarray) -> None:
    # A single reduction: any nan/inf entry makes the sum non-finite (inf
    # pairs of opposite sign produce nan), and legitimate values here are far
    # too small to overflow the sum.  Applied where non-finite values can
    # originate: leaf construction, division, and logarithms.  Every other
    # primitive maps finite inputs to finite outputs.
    if not math.isfinite(float(arr.sum())):
        raise ValidationError("tensor values must be finite")


class Tensor:
    """Immutable float64 array with an optional gradient slot.

    Results of recorded operations keep references to their parents plus a
    closure that scatters the incoming gradient; leaves created with
    ``requires_grad=True`` accumulate into ``grad`` during ``backward``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, parents: tuple["Tensor", ...],
              backward: Callable[[np.ndarray], None] | None) -> "Tensor":
        out = cls.__new__(cls)
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        arr.setflags(write=False)
        out.data = arr
        out.grad = None
        if backward is not None and _grad_enabled:
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        require(self.size == 1, f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable leaf.

        Gradients add onto existing ``grad`` buffers so per-sample losses can
        accumulate across a batch; call ``zero_grads`` between steps.
        """
        require(self.size == 1,
                f"backward() requires a scalar output, got shape {self.shape}")
        order = _topological_order(self)
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Arithmetic sugar over the primitive set.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return sub(self, other)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        key = id(node)
        if key in visited:
            continue
        visited.add(key)
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _wants_grad(*tensors: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad for t in tensors)


def _grad_parents(*tensors: Tensor) -> tuple[Tensor, ...]:
    return tuple(t for t in tensors if t.requires_grad)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValidationError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        out_data = a.data + float(b)
        if not _wants_grad(a):
            return Tensor._wrap(out_data, (), None)

        def _bw_scalar(g: np.ndarray) -> None:
            _accumulate(a, g)

        return Tensor._wrap(out_data, (a,), _bw_scalar)
    b = _lift(b)
    _check_same_shape(a, b, "add")
    out_data = a.data + b.data
    if not _wants_grad(a, b):
        return Tensor._wrap(out_data, (), None)

    def _bw(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, g)

    return Tensor._wrap(out_data, _grad_parents(a, b), _bw)


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        return add(a, -float(b))
    b = _lift(b)
    return add(a, mul(b, -1.0))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        scale = float(b)
        out_data = a.data * scale
        if not _wants_grad(a):
            return Tensor._wrap(out_data, (), None)

        def _bw_scalar(g: np.ndarray) -> None:
            _accumulate(a, g * scale)

        return Tensor._wrap(out_data, (a,), _bw_scalar)
    b = _lift(b)
    _check_same_shape(a, b, "mul")
    out_data = a.data * b.data
    if not _wants_grad(a, b):
        return Tensor._wrap(out_data, (), None)

    def _bw(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g * b.data)
        if b.requires_grad:
            _accumulate(b, g * a.data)

    return Tensor._wrap(out_data, _grad_parents(a, b), _bw)


def reciprocal(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore"):
        out_data = 1.0 / a.data
    _check_finite(out_data)
    if not _wants_grad(a):
        return Tensor._wrap(out_data, (), None)

    def _bw(g: np.ndarray) -> None:
        _accumulate(a, -g * out_data * out_data)

    return Tensor._wrap(out_data, (a,), _bw)


def absolute(a: Tensor) -> Tensor:
    out_data = np.abs(a.data)
    if not _wants_grad(a):
        return Tensor._wrap(out_data, (), None)
    sign = np.sign(a.data)

    def _bw(g: np.ndarray) -> None:
        _accumulate(a, g * sign)

    return Tensor._wrap(out_data, (a,), _bw)


def maximum_scalar(a: Tensor, floor: float) -> Tensor:
    """Elementwise max with a constant; gradient passes where the input wins."""
    out_data = np.maximum(a.data, floor)
    if not _wants_grad(a):
        return Tensor._wrap(out_data, (), None)
    mask = (a.data > floor).astype(np.float64)

    def _bw(g: np.ndarray) -> None:
        _accumulate(a, g * mask)

    return Tensor._wrap(out_data, (a,), _bw)


# ---------------------------------------------------------------------------
# smooth elementwise maps


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign for overflow-free evaluation.
    x = a.data
    decay = np.exp(-np.abs(x))
    out_data = np.where(x >= 0, 1.0 / (1.0 + decay), decay / (1.0 + decay))
    if not _wants_grad(a):
        return Tensor._wrap(out_data, (), None)

    def _bw(g: np.ndarray) -> None:
        _accumulate(a, g * out_data * (1.0 - out_data))

    return Tensor._wrap(out_data, (a,), _bw)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    if not _wants_grad(a):
        return Tensor._wrap(out_data, (), None)

    def _bw(g: np.ndarray) -> None:
        _accumulate(a, g * (1.0 - out_data * out_data))

    return Tensor._wrap(out_data, (a,), _bw)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)
    if not _wants_grad(a):
        return Tensor._wrap(out_data, (), None)
    mask = (a.data > 0).astype(np.float64)

    def _bw(g: np.ndarray) -> None:
        _accumulate(a, g * mask)

    return Tensor._wrap(out_data, (a,), _bw)


def exp_clipped(a: Tensor, limit: float = EXP_CLAMP) -> Tensor:
    """Exponential with the argument clamped to [-limit, limit].

    The clamp bounds evidence magnitudes and keeps downstream strengths
    finite; outside the clamp the gradient is zero.
    """
    clipped = np.clip(a.data, -limit, limit)
    out_data = np.exp(clipped)
    if not _wants_grad(a):
        return Tensor._wrap(out_data, (), None)
    mask = (np.abs(a.data) < limit).astype(np.float64)

    def _bw(g: np.ndarray) -> None:
        _accumulate(a, g * out_data * mask)

    return Tensor._wrap(out_data, (a,), _bw)


def log(a: Tensor) -> Tensor:
    if float(a.data.min()) <= 0:
        raise ValidationError("log requires strictly positive inputs")
    out_data = np.log(a.data)
    if not _wants_grad(a):
        return Tensor._wrap(out_data, (), None)
    inv = 1.0 / a.data

    def _bw(g: np.ndarray) -> None:
        _accumulate(a, g * inv)

    return Tensor._wrap(out_data, (a,), _bw)


def log_floored(a: Tensor, floor: float = 1e-12) -> Tensor:
    """log(max(x, floor)); the gradient is zero where the floor binds."""
    floored = np.maximum(a.data, floor)
    out_data = np.log(floored)
    if not _wants_grad(a):
        return Tensor._wrap(out_data, (), None)
    inv = np.where(a.data > floor, 1.0 / floored, 0.0)

    def _bw(g: np.ndarray) -> None:
        _accumulate(a, g * inv)

    return Tensor._wrap(out_data, (a,), _bw)


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax for 2D inputs, plain softmax for vectors."""
    if a.data.ndim not in (1, 2):
        raise ValidationError(f"softmax expects a vector or matrix, got shape {a.shape}")
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    out_data = exps / exps.sum(axis=-1, keepdims=True)
    if not _wants_grad(a):
        return Tensor._wrap(out_data, (), None)

    def _bw(g: np.ndarray) -> None:
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        _accumulate(a, out_data * (g - dot))

    return Tensor._wrap(out_data, (a,), _bw)


# ---------------------------------------------------------------------------
# contractions and structure


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValidationError(
            f"matmul expects matrices, got shapes {a.shape} and {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValidationError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data
    if not _wants_grad(a, b):
        return Tensor._wrap(out_data, (), None)

    def _bw(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return Tensor._wrap(out_data, _grad_parents(a, b), _bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValidationError(f"transpose expects a matrix, got shape {a.shape}")
    out_data = a.data.T
    if not _wants_grad(a):
        return Tensor._wrap(out_data, (), None)

    def _bw(g: np.ndarray) -> None:
        _accumulate(a, g.T)

    return Tensor._wrap(out_data, (a,), _bw)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out_data = a.data.reshape(shape)
    if not _wants_grad(a):
        return Tensor._wrap(out_data, (), None)
    original = a.shape

    def _bw(g: np.ndarray) -> None:
        _accumulate(a, g.reshape(original))

    return Tensor._wrap(out_data, (a,), _bw)


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[1]:
        raise ValidationError(
            f"concat_rows needs matching column counts: {a.shape} vs {b.shape}")
    out_data = np.concatenate([a.data, b.data], axis=0)
    if not _wants_grad(a, b):
        return Tensor._wrap(out_data, (), None)
    split = a.shape[0]

    def _bw(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g[:split])
        if b.requires_grad:
            _accumulate(b, g[split:])

    return Tensor._wrap(out_data, _grad_parents(a, b), _bw)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2 or not 0 <= start < stop <= a.data.shape[1]:
        raise ValidationError(
            f"column slice [{start}:{stop}] out of range for shape {a.shape}")
    out_data = a.data[:, start:stop]
    if not _wants_grad(a):
        return Tensor._wrap(out_data, (), None)
    shape = a.shape

    def _bw(g: np.ndarray) -> None:
        full = np.zeros(shape)
        full[:, start:stop] = g
        _accumulate(a, full)

    return Tensor._wrap(out_data, (a,), _bw)


def take_rows(a: Tensor, indices) -> Tensor:
    if a.data.ndim != 2:
        raise ValidationError(f"take_rows expects a matrix, got shape {a.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1 or idx.size < 1:
        raise ValidationError("row indices must form a non-empty vector")
    if idx.min() < 0 or idx.max() >= a.data.shape[0]:
        raise ValidationError(f"row indices out of range for shape {a.shape}")
    out_data = a.data[idx]
    if not _wants_grad(a):
        return Tensor._wrap(out_data, (), None)
    shape = a.shape

    def _bw(g: np.ndarray) -> None:
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return Tensor._wrap(out_data, (a,), _bw)


def tile_rows(v: Tensor, rows: int) -> Tensor:
    """Repeat a vector as the rows of a (rows, len) matrix."""
    if v.data.ndim != 1:
        raise ValidationError(f"tile_rows expects a vector, got shape {v.shape}")
    out_data = np.tile(v.data, (rows, 1))
    if not _wants_grad(v):
        return Tensor._wrap(out_data, (), None)

    def _bw(g: np.ndarray) -> None:
        _accumulate(v, g.sum(axis=0))

    return Tensor._wrap(out_data, (v,), _bw)


def tile_cols(v: Tensor, cols: int) -> Tensor:
    """Repeat a vector as the columns of a (len, cols) matrix."""
    if v.data.ndim != 1:
        raise ValidationError(f"tile_cols expects a vector, got shape {v.shape}")
    out_data = np.tile(v.data.reshape(-1, 1), (1, cols))
    if not _wants_grad(v):
        return Tensor._wrap(out_data, (), None)

    def _bw(g: np.ndarray) -> None:
        _accumulate(v, g.sum(axis=1))

    return Tensor._wrap(out_data, (v,), _bw)


def sum_all(a: Tensor) -> Tensor:
    out_data = np.asarray(a.data.sum())
    if not _wants_grad(a):
        return Tensor._wrap(out_data, (), None)
    shape = a.shape

    def _bw(g: np.ndarray) -> None:
        _accumulate(a, np.broadcast_to(g, shape))

    return Tensor._wrap(out_data, (a,), _bw)


def mean_all(a: Tensor) -> Tensor:
    return mul(sum_all(a), 1.0 / a.size)


def sum_axis(a: Tensor, axis: int) -> Tensor:
    if a.data.ndim != 2 or axis not in (0, 1):
        raise ValidationError(
            f"sum_axis expects a matrix and axis 0 or 1, got shape {a.shape}, axis {axis}")
    out_data = a.data.sum(axis=axis)
    if not _wants_grad(a):
        return Tensor._wrap(out_data, (), None)
    shape = a.shape

    def _bw(g: np.ndarray) -> None:
        if axis == 0:
            _accumulate(a, np.broadcast_to(g, shape))
        else:
            _accumulate(a, np.broadcast_to(g.reshape(-1, 1), shape))

    return Tensor._wrap(out_data, (a,), _bw)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, padding: str = "same") -> Tensor:
    """1D convolution over the last axis.

    ``x`` is (channels_in, width), ``weight`` is (channels_out, channels_in,
    kernel), ``bias`` is (channels_out,).  "same" padding requires an odd
    kernel and preserves the width; "valid" yields width - kernel + 1.
    """
    if x.data.ndim != 2 or weight.data.ndim != 3:
        raise ValidationError(
            f"conv1d expects 2D input and 3D weight, got {x.shape} and {weight.shape}")
    c_out, c_in, k = weight.shape
    if x.data.shape[0] != c_in:
        raise ValidationError(
            f"conv1d channel mismatch: input {x.shape} vs weight {weight.shape}")
    if bias.data.shape != (c_out,):
        raise ValidationError(
            f"conv1d bias shape {bias.shape} does not match {c_out} output channels")
    width = x.shape[1]
    if padding == "same":
        if k % 2 != 1:
            raise ValidationError(f"'same' padding needs an odd kernel, got {k}")
        pad = k // 2
        xp = np.zeros((c_in, width + 2 * pad))
        xp[:, pad:pad + width] = x.data
        out_width = width
    elif padding == "valid":
        if width < k:
            raise ValidationError(
                f"conv1d 'valid' needs width >= kernel: {x.shape} vs kernel {k}")
        pad = 0
        xp = x.data
        out_width = width - k + 1
    else:
        raise ValidationError(f"unknown padding {padding!r}")

    # im2col: cols[c, j, t] = xp[c, t + j], flattened to (c_in * k, out_width).
    cols = np.empty((c_in, k, out_width))
    for j in range(k):
        cols[:, j, :] = xp[:, j:j + out_width]
    cols2 = cols.reshape(c_in * k, out_width)
    w2 = weight.data.reshape(c_out, c_in * k)
    out_data = w2 @ cols2 + bias.data.reshape(-1, 1)
    if not _wants_grad(x, weight, bias):
        return Tensor._wrap(out_data, (), None)

    def _bw(g: np.ndarray) -> None:
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=1))
        if weight.requires_grad:
            _accumulate(weight, (g @ cols2.T).reshape(c_out, c_in, k))
        if x.requires_grad:
            dcols = (w2.T @ g).reshape(c_in, k, out_width)
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, j:j + out_width] += dcols[:, j, :]
            _accumulate(x, dxp[:, pad:pad + width] if pad else dxp)

    return Tensor._wrap(out_data, _grad_parents(x, weight, bias), _bw)


# ---------------------------------------------------------------------------
# non-differentiable selection


def topk_indices(values, k: int) -> np.ndarray:
    """Indices of the k largest entries, ties won by the lower index.

    Returned in ascending index order; selection only, no gradient.
    """
    arr = values.data if isinstance(values, Tensor) else np.asarray(values, dtype=np.float64)
    require(arr.ndim == 1, f"topk_indices expects a vector, got shape {arr.shape}")
    require(1 <= k <= arr.size, f"k={k} out of range for {arr.size} entries")
    order = np.argsort(-arr, kind="stable")
    return np.sort(order[:k])


# ---------------------------------------------------------------------------
# gradient helpers


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar loss with respect to each parameter tensor."""
    zero_grads(params)
    loss.backward()
    return [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
            for p in params]


def finite_diff(f: Callable[[Sequence[np.ndarray]], float],
                arrays: Sequence[np.ndarray],
                step: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient oracle, one coordinate at a time.

    ``f`` maps the list of arrays to a scalar; the returned list matches the
    input shapes.  Deliberately independent of the reverse-mode machinery.
    """
    require(step > 0, f"step must be positive, got {step}")
    work = [np.array(a, dtype=np.float64) for a in arrays]
    grads = [np.zeros_like(a) for a in work]
    for slot, arr in enumerate(work):
        flat = arr.reshape(-1)
        out = grads[slot].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            hi = f(work)
            flat[i] = saved - step
            lo = f(work)
            flat[i] = saved
            out[i] = (hi - lo) / (2.0 * step)
    return grads


def relative_gradient_error(analytic: Sequence[np.ndarray],
                            numeric: Sequence[np.ndarray],
                            denominator_floor: float = 1e-6) -> float:
    """Worst per-coordinate relative disagreement between two gradient sets.

    Coordinates whose magnitudes sit below the floor are compared against the
    floor instead, which keeps pure round-off noise from dominating.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), denominator_floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
