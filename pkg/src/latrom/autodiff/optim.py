from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .params import ParamStore


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    store: ParamStore,
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update over every parameter, then zero the grads."""
    for path, p in store.items():
        if p.grad is None:
            raise ContractError(f"adam_step: parameter {path!r} has no gradient")
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for path, p in store.items():
        g = p.grad
        m = state.m.get(path)
        if m is None:
            m = state.m[path] = np.zeros_like(p.data)
            state.v[path] = np.zeros_like(p.data)
        v = state.v[path]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    store.zero_grad()


class Adam:
    """Adam bound to one store and one learning rate."""

    def __init__(self, store: ParamStore, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ContractError(f"learning rate must be positive, got {lr}")
        self.store = store
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def step(self) -> None:
        adam_step(self.store, self.state, self.lr, self.betas, self.eps)


class RowAdam:
    """Lazy Adam for a table of per-sample codes.

    Only the rows touched by the current minibatch are updated, and each row
    keeps its own step count for bias correction. With dense Adam every row
    keeps drifting on stale momentum between visits.
    """

    def __init__(self, store: ParamStore, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ContractError(f"learning rate must be positive, got {lr}")
        self.store = store
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.m = {p: np.zeros_like(t.data) for p, t in store.items()}
        self.v = {p: np.zeros_like(t.data) for p, t in store.items()}
        self.steps = {p: np.zeros(t.shape[0], dtype=np.int64) for p, t in store.items()}

    def step(self, rows) -> None:
        rows = np.unique(np.asarray(rows, dtype=np.int64))
        b1, b2 = self.betas
        for path, p in self.store.items():
            if p.grad is None:
                raise ContractError(f"RowAdam: parameter {path!r} has no gradient")
            g = p.grad[rows]
            self.steps[path][rows] += 1
            n = self.steps[path][rows].reshape((-1,) + (1,) * (g.ndim - 1))
            m = b1 * self.m[path][rows] + (1.0 - b1) * g
            v = b2 * self.v[path][rows] + (1.0 - b2) * g * g
            self.m[path][rows] = m
            self.v[path][rows] = v
            p.data[rows] -= self.lr * (m / (1.0 - b1**n)) / (np.sqrt(v / (1.0 - b2**n)) + self.eps)
        self.store.zero_grad()
