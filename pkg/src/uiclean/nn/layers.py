"""Parameters and the layer set shared by the models in this package."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    concat,
    conv2d,
    gather_rows,
    layer_norm_core,
    matmul,
    max_,
    relu,
    reshape,
    softmax,
    transpose,
)


class Parameter:
    """A named trainable tensor with its gradient slot."""

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.tensor = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        self.tensor.data = np.asarray(value, dtype=np.float64)

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.grad = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.shape})"


class ParameterStore:
    """Model-level registry; every parameter is registered exactly once."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value: np.ndarray) -> Parameter:
        if name in self._params:
            raise ValueError(f"parameter {name!r} registered twice")
        param = Parameter(name, value)
        self._params[name] = param
        return param

    def trunc_normal(self, name: str, shape: Sequence[int], fan_in: int) -> Parameter:
        # Weight init: truncated normal with std 1/sqrt(fan_in). Truncation
        # resamples rather than clips; clipping would pile probability mass
        # onto exactly +/-2 std and create tied values.
        std = 1.0 / np.sqrt(max(fan_in, 1))
        raw = self.rng.standard_normal(tuple(shape))
        out_of_range = np.abs(raw) > 2.0
        while out_of_range.any():
            raw[out_of_range] = self.rng.standard_normal(int(out_of_range.sum()))
            out_of_range = np.abs(raw) > 2.0
        return self.add(name, raw * std)

    def zeros(self, name: str, shape: Sequence[int]) -> Parameter:
        return self.add(name, np.zeros(tuple(shape)))

    def ones(self, name: str, shape: Sequence[int]) -> Parameter:
        return self.add(name, np.ones(tuple(shape)))

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        if missing:
            raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")
        for name, param in self._params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise ShapeError(
                    f"checkpoint shape mismatch for {name}: {value.shape} vs {param.shape}"
                )
            param.data = value


class Dense:
    def __init__(self, store: ParameterStore, name: str, d_in: int, d_out: int, zero_init: bool = False):
        # zero_init suits classifier heads: uniform output distribution at
        # step zero, symmetry broken by the first gradient step.
        self.d_in = d_in
        self.d_out = d_out
        if zero_init:
            self.w = store.zeros(f"{name}.w", (d_in, d_out))
        else:
            self.w = store.trunc_normal(f"{name}.w", (d_in, d_out), fan_in=d_in)
        self.b = store.zeros(f"{name}.b", (d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"dense expected last dim {self.d_in}, got {x.shape}")
        flat = x if x.ndim == 2 else reshape(x, (-1, self.d_in))
        out = matmul(flat, self.w.tensor) + self.b.tensor
        if x.ndim != 2:
            out = reshape(out, tuple(x.shape[:-1]) + (self.d_out,))
        return out


class Conv2d:
    def __init__(
        self,
        store: ParameterStore,
        name: str,
        c_in: int,
        c_out: int,
        kernel: int = 3,
        stride: int = 1,
    ):
        self.stride = stride
        fan_in = kernel * kernel * c_in
        self.w = store.trunc_normal(f"{name}.w", (kernel, kernel, c_in, c_out), fan_in=fan_in)
        self.b = store.zeros(f"{name}.b", (c_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w.tensor, self.b.tensor, stride=self.stride, padding="same")


class LayerNorm:
    def __init__(self, store: ParameterStore, name: str, dim: int):
        self.gamma = store.ones(f"{name}.gamma", (dim,))
        self.beta = store.zeros(f"{name}.beta", (dim,))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm_core(x) * self.gamma.tensor + self.beta.tensor


class Embedding:
    def __init__(self, store: ParameterStore, name: str, vocab_size: int, dim: int):
        self.table = store.trunc_normal(f"{name}.table", (vocab_size, dim), fan_in=dim)

    def lookup(self, ids) -> Tensor:
        return gather_rows(self.table.tensor, ids)


def multi_head_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    heads: int,
    probe: list | None = None,
) -> Tensor:
    """Scaled dot-product attention over already-projected q/k/v.

    Shapes: q [Nq, D], k and v [Nk, D]; D must divide evenly into heads.
    ``probe``, when given, collects the per-head attention weights
    [heads, Nq, Nk] as numpy for inspection.
    """
    n_q, dim = q.shape
    n_k = k.shape[0]
    if dim % heads != 0:
        raise ShapeError(f"model dim {dim} not divisible by {heads} heads")
    if k.shape != (n_k, dim) or v.shape != (n_k, dim):
        raise ShapeError(f"attention shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    d_head = dim // heads

    qh = transpose(reshape(q, (n_q, heads, d_head)), (1, 0, 2))  # [h, Nq, dh]
    kh = transpose(reshape(k, (n_k, heads, d_head)), (1, 0, 2))
    vh = transpose(reshape(v, (n_k, heads, d_head)), (1, 0, 2))
    scores = matmul(qh, transpose(kh, (0, 2, 1))) * (1.0 / np.sqrt(d_head))
    weights = softmax(scores, axis=-1)  # [h, Nq, Nk]
    if probe is not None:
        probe.append(weights.data.copy())
    mixed = matmul(weights, vh)  # [h, Nq, dh]
    return reshape(transpose(mixed, (1, 0, 2)), (n_q, dim))


def max_pool_over_sequence(x: Tensor) -> Tensor:
    """Element-wise max over the first axis of [T, D] -> [D]."""
    if x.ndim != 2:
        raise ShapeError(f"sequence pooling needs [T, D], got {x.shape}")
    return max_(x, axis=0)


def global_average_pool(x: Tensor) -> Tensor:
    """[B, H, W, C] -> [B, C]."""
    batch, height, width, channels = x.shape
    flat = reshape(x, (batch, height * width, channels))
    from .tensor import mean_

    return mean_(flat, axis=1)


def mlp_block(store: ParameterStore, name: str, dim: int, hidden: int):
    """Two-layer MLP with relu, as used inside transformer blocks."""
    fc1 = Dense(store, f"{name}.fc1", dim, hidden)
    fc2 = Dense(store, f"{name}.fc2", hidden, dim)

    def apply(x: Tensor) -> Tensor:
        return fc2(relu(fc1(x)))

    return apply
