"""Loss functions, training configuration, and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .layers import Parameter
from .tensor import Tensor, _accumulate, _make, logsumexp, mean_, mul, sum_, take_along_rows


@dataclass(frozen=True)
class TrainConfig:
    """Step-schedule training configuration.

    The learning rate is ``initial_lr`` before ``lr_drop_step`` and
    ``reduced_lr`` from that step on.
    """

    batch_size: int
    total_steps: int
    initial_lr: float
    reduced_lr: float
    lr_drop_step: int
    l2_coefficient: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size <= 0 or self.total_steps <= 0:
            raise ValueError("batch_size and total_steps must be positive")
        if self.initial_lr <= 0 or self.reduced_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 <= self.lr_drop_step < self.total_steps:
            raise ValueError("lr_drop_step must lie within total_steps")
        if self.l2_coefficient < 0:
            raise ValueError("l2_coefficient must be non-negative")

    def lr_at(self, step_index: int) -> float:
        return self.initial_lr if step_index < self.lr_drop_step else self.reduced_lr


def cross_entropy(logits: Tensor, labels: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean cross-entropy over the batch; masked positions are excluded
    from the mean."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"cross_entropy needs [N,C] logits and [N] labels, got {logits.shape}, {labels.shape}")
    classes = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"label out of range [0,{classes}): {labels.min()}..{labels.max()}")
    nll = logsumexp(logits, axis=1) - take_along_rows(logits, labels)
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        count = mask.sum()
        if count == 0:
            raise ValueError("cross_entropy mask excludes every position")
        return mul(sum_(mul(nll, mask)), 1.0 / count)
    return mean_(nll)


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Numerically stable mean binary cross-entropy on logits."""
    t = np.asarray(targets, dtype=np.float64)
    if logits.shape != t.shape:
        raise ValueError(f"bce shapes differ: {logits.shape} vs {t.shape}")
    z = logits.data
    per_item = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray(per_item.mean())
    prob = np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))

    def backward(g: np.ndarray) -> None:
        _accumulate(logits, g * (prob - t) / max(t.size, 1))

    return _make(out, (logits,), backward)


def l2_penalty(params: Sequence[Parameter], coefficient: float) -> Tensor:
    """coefficient * sum of squared parameter norms, as a graph node so the
    regularizer contributes gradients."""
    total: Tensor | None = None
    for p in params:
        sq = sum_(mul(p.tensor, p.tensor))
        total = sq if total is None else total + sq
    if total is None:
        return Tensor(0.0)
    return mul(total, coefficient)


def classification_loss(
    logits: Tensor,
    labels: np.ndarray,
    params: Sequence[Parameter],
    l2_coefficient: float,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Cross-entropy plus L2 over all trainable weights."""
    loss = cross_entropy(logits, labels, mask=mask)
    if l2_coefficient > 0:
        loss = loss + l2_penalty(params, l2_coefficient)
    return loss


class Adam:
    """Adam with the two-phase learning-rate schedule from TrainConfig.

    Accepts parameter groups so different parts of a model (e.g. image
    backbone vs the rest) can train at different rates.
    """

    def __init__(
        self,
        groups: Sequence[tuple[Sequence[Parameter], TrainConfig]],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.groups = [(list(params), config) for params, config in groups]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}
        seen: set[int] = set()
        for params, _ in self.groups:
            for p in params:
                if id(p) in seen:
                    raise ValueError(f"parameter {p.name!r} appears in two groups")
                seen.add(id(p))
                self._m[id(p)] = np.zeros_like(p.data)
                self._v[id(p)] = np.zeros_like(p.data)

    @classmethod
    def single(cls, params: Sequence[Parameter], config: TrainConfig) -> "Adam":
        return cls([(params, config)])

    def zero_grad(self) -> None:
        for params, _ in self.groups:
            for p in params:
                p.zero_grad()

    def step(self, step_index: int) -> None:
        t = step_index + 1
        for params, config in self.groups:
            lr = config.lr_at(step_index)
            for p in params:
                g = p.grad
                if g is None:
                    continue
                m = self._m[id(p)]
                v = self._v[id(p)]
                m *= self.beta1
                m += (1 - self.beta1) * g
                v *= self.beta2
                v += (1 - self.beta2) * g * g
                m_hat = m / (1 - self.beta1**t)
                v_hat = v / (1 - self.beta2**t)
                p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; the model carries the last good state."""
