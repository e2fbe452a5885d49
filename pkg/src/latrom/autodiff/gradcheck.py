"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ContractError
from .params import ParamStore
from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    max_rel_err: dict[str, float]
    tol: float
    eps: float
    n_checked: int

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tol

    def lines(self) -> list[str]:
        return [f"{path}: {err:.3e}" for path, err in self.max_rel_err.items()]


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(
    f: Callable[[], Tensor],
    params: ParamStore,
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_per_param: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of ``f()`` against central differences.

    ``f`` must read its parameters from ``params`` and return a scalar. With
    ``max_per_param`` set, a seeded random subset of entries is probed for
    each parameter instead of all of them.
    """
    if not 1e-7 < eps < 1e-3:
        raise ContractError(f"eps must lie in (1e-7, 1e-3), got {eps}")
    saved = {p: t.grad for p, t in params.items()}
    params.zero_grad()
    try:
        with Tape() as tape:
            loss = f()
        if loss.size != 1:
            raise ContractError(f"grad_check needs a scalar function, got shape {loss.shape}")
        tape.backward(loss)
        again = f()
        if not np.array_equal(loss.data, again.data):
            raise ContractError("grad_check: two forward passes disagree; f is not deterministic")
        tape_grads = {
            p: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
            for p, t in params.items()
        }
    finally:
        for p, t in params.items():
            t.grad = saved[p]

    rng = np.random.default_rng(seed)
    report: dict[str, float] = {}
    n_checked = 0
    for path, t in params.items():
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = np.sort(rng.choice(flat.size, size=max_per_param, replace=False))
        fd = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = f().item()
            flat[i] = orig - eps
            down = f().item()
            flat[i] = orig
            fd[j] = (up - down) / (2.0 * eps)
        report[path] = float(rel_err(tape_grads[path].reshape(-1)[idx], fd).max(initial=0.0))
        n_checked += idx.size
    return GradCheckReport(report, tol, eps, n_checked)
