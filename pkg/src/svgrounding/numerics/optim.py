"""Adam with bias correction and linear learning-rate warmup."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Parameter


@dataclass
class AdamState:
    base_lr: float = 1e-3
    warmup_steps: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be positive")

    def lr(self, step: int | None = None) -> float:
        step = self.step_count if step is None else step
        return self.base_lr * min(1.0, step / self.warmup_steps)


def adam_step(state: AdamState, params: dict[str, Parameter]) -> None:
    """Apply one update in place to every parameter from its ``grad``."""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ValueError(f"parameter {missing[0]!r} has no gradient")
    state.step_count += 1
    t = state.step_count
    lr = state.lr()
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad
        m = state.first.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.first[name] = m
            state.second[name] = np.zeros_like(p.data)
        v = state.second[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def zero_grad(params: dict[str, Parameter]) -> None:
    for p in params.values():
        p.grad = None
