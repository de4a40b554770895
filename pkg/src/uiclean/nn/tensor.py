"""Minimal reverse-mode automatic differentiation on numpy arrays.

Training math runs in 64-bit floats so finite-difference gradient checks
can be tight. Each operation records its parents and a backward closure;
``Tensor.backward`` on a scalar loss walks the recorded graph in reverse
topological order and accumulates gradients into every tensor that
requires them.

Broadcasting follows numpy; gradients of broadcast operands are summed
back to the operand's shape. Only the operations the models in this
package need are provided.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Contract violation: operands with incompatible shapes."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_backward_done")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward_fn: Callable[[np.ndarray], None] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward_fn = _backward_fn
        self._backward_done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar loss.

        Raises if called twice on the same recorded graph: gradients are
        accumulated, so a second sweep without zeroing would double them.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.shape}")
        if self._backward_done:
            raise RuntimeError(
                "backward already ran on this graph; zero gradients and rebuild the forward pass"
            )
        self._backward_done = True

        order = _topological_order(self)
        self.grad = np.ones_like(self.data)
        for tensor in reversed(order):
            if tensor._backward_fn is not None and tensor.grad is not None:
                tensor._backward_fn(tensor.grad)

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / other)
        return mul(self, power(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        tensor, expanded = stack.pop()
        if expanded:
            order.append(tensor)
            continue
        if id(tensor) in seen:
            continue
        seen.add(id(tensor))
        stack.append((tensor, True))
        for parent in tensor._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _coerce(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if not (tensor.requires_grad or tensor._parents):
        return
    if tensor.grad is None:
        tensor.grad = grad.copy()
    else:
        tensor.grad = tensor.grad + grad


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcast to produce it."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    requires = any(p.requires_grad or p._parents for p in parents)
    if not requires:
        return Tensor(data)
    return Tensor(data, _parents=parents, _backward_fn=backward_fn)


# --------------------------------------------------------------------------
# Elementwise and arithmetic ops


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out_data = a.data + b.data

    def backward(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out_data = a.data * b.data

    def backward(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = _coerce(a)
    out_data = a.data**exponent

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * exponent * a.data ** (exponent - 1.0))

    return _make(out_data, (a,), backward)


def relu(a) -> Tensor:
    a = _coerce(a)
    out_data = np.maximum(a.data, 0.0)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * (a.data > 0.0))

    return _make(out_data, (a,), backward)


def exp(a) -> Tensor:
    a = _coerce(a)
    out_data = np.exp(a.data)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * out_data)

    return _make(out_data, (a,), backward)


def log(a) -> Tensor:
    a = _coerce(a)
    out_data = np.log(a.data)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g / a.data)

    return _make(out_data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    out_data = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-a.data)),
                        np.exp(a.data) / (1.0 + np.exp(a.data)))

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


# --------------------------------------------------------------------------
# Linear algebra


def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires >=2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g: np.ndarray) -> None:
        _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(out_data, (a, b), backward)


# --------------------------------------------------------------------------
# Reductions


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g: np.ndarray) -> None:
        if axis is None:
            grad = np.broadcast_to(g, a.shape)
        elif keepdims:
            grad = np.broadcast_to(g, a.shape)
        else:
            grad = np.broadcast_to(np.expand_dims(g, axis), a.shape)
        _accumulate(a, grad.astype(np.float64))

    return _make(out_data, (a,), backward)


def mean_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    count = a.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def max_(a, axis: int) -> Tensor:
    """Maximum along one axis; the gradient routes to the first maximal
    element of each slice, which keeps backward deterministic under ties."""
    a = _coerce(a)
    idx = np.argmax(a.data, axis=axis)
    out_data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        _accumulate(a, full)

    return _make(out_data, (a,), backward)


# --------------------------------------------------------------------------
# Shape ops


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _coerce(a)
    shape = tuple(shape)
    out_data = a.data.reshape(shape)

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g.reshape(a.shape))

    return _make(out_data, (a,), backward)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _coerce(a)
    axes = tuple(axes)
    out_data = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g.transpose(inverse))

    return _make(out_data, (a,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_coerce(t) for t in tensors]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for part, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, stop)
            _accumulate(part, g[tuple(index)])

    return _make(out_data, tuple(parts), backward)


def select(a, index: int) -> Tensor:
    """Pick one slice along axis 0, dropping the axis."""
    a = _coerce(a)
    out_data = a.data[index]

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        full[index] = g
        _accumulate(a, full)

    return _make(out_data, (a,), backward)


def gather_rows(a, indices) -> Tensor:
    """Row lookup along axis 0 (embedding lookup); duplicate indices
    accumulate their gradients."""
    a = _coerce(a)
    idx = np.asarray(indices, dtype=np.int64)
    out_data = a.data[idx]

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return _make(out_data, (a,), backward)


def take_along_rows(a, indices) -> Tensor:
    """out[i] = a[i, indices[i]] for a 2-D tensor."""
    a = _coerce(a)
    idx = np.asarray(indices, dtype=np.int64)
    if a.ndim != 2 or idx.shape != (a.shape[0],):
        raise ShapeError(f"take_along_rows needs [N,C] and [N] indices, got {a.shape}, {idx.shape}")
    rows = np.arange(a.shape[0])
    out_data = a.data[rows, idx]

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        full[rows, idx] = g
        _accumulate(a, full)

    return _make(out_data, (a,), backward)


# --------------------------------------------------------------------------
# Normalization and softmax


def softmax(a, axis: int = -1) -> Tensor:
    a = _coerce(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    out_data = exps / exps.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> None:
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accumulate(a, out_data * (g - dot))

    return _make(out_data, (a,), backward)


def logsumexp(a, axis: int = -1) -> Tensor:
    a = _coerce(a)
    m = a.data.max(axis=axis, keepdims=True)
    out_data = (np.log(np.exp(a.data - m).sum(axis=axis, keepdims=True)) + m).squeeze(axis)
    softmax_data = np.exp(a.data - np.expand_dims(out_data, axis))

    def backward(g: np.ndarray) -> None:
        _accumulate(a, np.expand_dims(g, axis) * softmax_data)

    return _make(out_data, (a,), backward)


def layer_norm_core(a, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    a = _coerce(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    z = centered * inv_std

    def backward(g: np.ndarray) -> None:
        d = a.shape[-1]
        g_mean = g.mean(axis=-1, keepdims=True)
        gz_mean = (g * z).mean(axis=-1, keepdims=True)
        _accumulate(a, inv_std * (g - g_mean - z * gz_mean))

    return _make(z, (a,), backward)


# --------------------------------------------------------------------------
# Convolution / pooling


def _same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)  # ceil division
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv2d(x, w, b=None, stride: int = 1, padding: str | int = "same") -> Tensor:
    """NHWC convolution. ``w`` has shape [KH, KW, Cin, F]."""
    x, w = _coerce(x), _coerce(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d needs x [B,H,W,C] and w [KH,KW,C,F], got {x.shape}, {w.shape}")
    if x.shape[3] != w.shape[2]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    batch, height, width, cin = x.shape
    kh, kw, _, filters = w.shape
    if padding == "same":
        ph = _same_padding(height, kh, stride)
        pw = _same_padding(width, kw, stride)
    else:
        ph = pw = (int(padding), int(padding))
    xp = np.pad(x.data, ((0, 0), ph, pw, (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # [B, OH, OW, Cin, KH, KW]
    out_h, out_w = windows.shape[1], windows.shape[2]
    cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3)).reshape(
        batch * out_h * out_w, kh * kw * cin
    )
    wm = w.data.reshape(kh * kw * cin, filters)
    out_flat = cols @ wm
    b_t = _coerce(b) if b is not None else None
    if b_t is not None:
        out_flat = out_flat + b_t.data
    out_data = out_flat.reshape(batch, out_h, out_w, filters)

    def backward(g: np.ndarray) -> None:
        g_flat = g.reshape(batch * out_h * out_w, filters)
        _accumulate(w, (cols.T @ g_flat).reshape(w.shape))
        if b_t is not None:
            _accumulate(b_t, g_flat.sum(axis=0))
        if x.requires_grad or x._parents:
            g_cols = (g_flat @ wm.T).reshape(batch, out_h, out_w, kh, kw, cin)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + out_h * stride : stride, j : j + out_w * stride : stride, :] += (
                        g_cols[:, :, :, i, j, :]
                    )
            _accumulate(x, gxp[:, ph[0] : ph[0] + height, pw[0] : pw[0] + width, :])

    parents = (x, w) if b_t is None else (x, w, b_t)
    return _make(out_data, parents, backward)


def max_pool2d(x, size: int) -> Tensor:
    """Non-overlapping max pooling; ragged edges are padded with -inf. Ties
    route the gradient to the first maximal element of each window."""
    x = _coerce(x)
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d needs [B,H,W,C], got {x.shape}")
    batch, height, width, channels = x.shape
    out_h = -(-height // size)
    out_w = -(-width // size)
    ph, pw = out_h * size - height, out_w * size - width
    xp = np.pad(x.data, ((0, 0), (0, ph), (0, pw), (0, 0)), constant_values=-np.inf)
    windows = xp.reshape(batch, out_h, size, out_w, size, channels)
    windows = windows.transpose(0, 1, 3, 5, 2, 4).reshape(batch, out_h, out_w, channels, size * size)
    idx = np.argmax(windows, axis=-1)
    out_data = np.take_along_axis(windows, idx[..., None], axis=-1).squeeze(-1)

    def backward(g: np.ndarray) -> None:
        g_windows = np.zeros_like(windows)
        np.put_along_axis(g_windows, idx[..., None], g[..., None], axis=-1)
        g_xp = g_windows.reshape(batch, out_h, out_w, channels, size, size).transpose(
            0, 1, 4, 2, 5, 3
        ).reshape(batch, out_h * size, out_w * size, channels)
        _accumulate(x, g_xp[:, :height, :width, :])

    return _make(out_data, (x,), backward)
