"""Nesterov SGD with global-norm clipping; stepped LR schedules."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autograd import Tensor
from .errors import ShapeError


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))


def clip_gradients(grads: Sequence[np.ndarray], max_norm: float) -> list[np.ndarray]:
    """Scale all gradients by ``max_norm / norm`` when their joint L2 norm exceeds ``max_norm``."""
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return list(grads)
    s = max_norm / norm
    return [g * np.asarray(s, dtype=g.dtype) for g in grads]


@dataclass
class OptState:
    lr: float = 0.01
    momentum: float = 0.9
    clip_norm: float | None = 1.0
    velocity: list[np.ndarray] = field(default_factory=list)
    steps: int = 0


def nesterov_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptState) -> list[np.ndarray]:
    """One Nesterov update; returns new parameter arrays and updates ``state.velocity``.

    v <- mu v - lr g ;  p <- p + mu v - lr g
    """
    if not state.velocity:
        state.velocity = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.velocity):
        raise ShapeError(f"nesterov_step: {len(params)} params, {len(grads)} grads, {len(state.velocity)} velocities")
    mu, lr = state.momentum, state.lr
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.velocity[i].shape:
            raise ShapeError(f"nesterov_step: parameter {i} has shape {p.shape} but gradient {g.shape}")
        step = lr * g
        v = mu * state.velocity[i] - step
        state.velocity[i] = v.astype(p.dtype, copy=False)
        out.append((p + mu * v - step).astype(p.dtype, copy=False))
    state.steps += 1
    return out


class SGD:
    """Nesterov SGD over a list of parameter Tensors (updated in place)."""

    def __init__(self, params: Sequence[Tensor], lr: float = 0.01, momentum: float = 0.9, clip_norm: float | None = 1.0):
        self.params = list(params)
        self.state = OptState(lr=lr, momentum=momentum, clip_norm=clip_norm,
                              velocity=[np.zeros_like(p.data) for p in self.params])

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = float(value)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self) -> float:
        """Apply one update from ``p.grad``; returns the pre-clip global gradient norm."""
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        norm = global_norm(grads)
        if self.state.clip_norm is not None:
            grads = clip_gradients(grads, self.state.clip_norm)
        new = nesterov_step([p.data for p in self.params], grads, self.state)
        for p, d in zip(self.params, new):
            p.data[...] = d
        return norm


@dataclass(frozen=True)
class LRSchedule:
    """Piecewise-constant learning rate by epoch (1-based).

    ``warmup`` applies to epochs ``1..warmup_epochs``; then ``base`` until the
    first cut; each epoch in ``cuts`` (and later) divides by ``factor``.
    """

    kind: str
    warmup: float
    warmup_epochs: int
    base: float
    cuts: tuple[int, ...]
    factor: float = 10.0

    @classmethod
    def named(cls, kind: str) -> "LRSchedule":
        if kind == "classification":
            return cls("classification", 0.01, 10, 0.1, (120, 150))
        if kind == "segmentation":
            return cls("segmentation", 0.01, 10, 0.1, (100, 150))
        if kind == "constant":
            return cls("constant", 0.01, 0, 0.01, ())
        raise ValueError(f"unknown schedule {kind!r}")


def lr_at(schedule: LRSchedule | str, epoch: int) -> float:
    if isinstance(schedule, str):
        schedule = LRSchedule.named(schedule)
    if epoch < 1:
        raise ValueError(f"epoch is 1-based, got {epoch}")
    if epoch <= schedule.warmup_epochs:
        return schedule.warmup
    n_cuts = sum(1 for c in schedule.cuts if epoch >= c)
    return schedule.base / schedule.factor**n_cuts
