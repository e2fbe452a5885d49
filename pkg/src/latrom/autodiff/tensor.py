"""Dense f64 tensors with a recording tape for reverse-mode differentiation.

Operations only record onto a tape while one is active (``with Tape() as tape``).
Outside a tape every op is a plain numpy computation, which is what inference
code wants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, DimensionError, NonFiniteError

_ACTIVE: list["Tape"] = []

Number = (int, float, np.floating, np.integer)


class Tensor:
    """A dense array of float64 values with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        if self._node is None:
            if self.data.size != 1:
                raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
            return
        self._node.tape.backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; all real work lives in the op functions below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def _raise_item(t: Tensor):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


@dataclass(eq=False)
class Node:
    tape: "Tape"
    out: Tensor
    parents: tuple[Tensor, ...]
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


@dataclass(eq=False)
class Tape:
    """Ordered record of differentiable operations."""

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._node is None or loss._node.tape is not self:
            if loss._node is not None:
                raise ContractError("loss was recorded on a different tape")
            return
        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = pending.pop(id(node.out), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._node is None:
                    if parent.grad is None:
                        parent.grad = np.array(pg, dtype=np.float64).reshape(parent.shape)
                    else:
                        parent.grad += pg
                else:
                    key = id(parent)
                    if key in pending:
                        pending[key] = pending[key] + pg
                    else:
                        pending[key] = pg


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    if tape is None:
        loss.backward()
    else:
        tape.backward(loss)


def _record(out_data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out._node = None
    out.requires_grad = False
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        node = Node(tape, out, parents, backward_fn, op)
        out._node = node
        tape.nodes.append(node)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _is_scalar(t: Tensor) -> bool:
    return t.data.size == 1


def _sum_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    if int(np.prod(shape)) == 1:
        return np.array(g.sum()).reshape(shape)
    lead = g.ndim - len(shape)
    g = g.sum(axis=tuple(range(lead))) if lead else g
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible")


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "add")
    out = a.data + b.data
    return _record(out, (a, b), lambda g: (_sum_to(g, a.shape), _sum_to(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "sub")
    out = a.data - b.data
    return _record(out, (a, b), lambda g: (_sum_to(g, a.shape), _sum_to(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    if isinstance(b, Number):
        return scale(as_tensor(a), float(b))
    if isinstance(a, Number):
        return scale(as_tensor(b), float(a))
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(
        ad * bd,
        (a, b),
        lambda g: (_sum_to(g * bd, a.shape), _sum_to(g * ad, b.shape)),
        "mul",
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(a.data * c, (a,), lambda g: (g * c,), "scale")


def sin(a: Tensor) -> Tensor:
    x = a.data
    return _record(np.sin(x), (a,), lambda g: (g * np.cos(x),), "sin")


def cos(a: Tensor) -> Tensor:
    x = a.data
    return _record(np.cos(x), (a,), lambda g: (-g * np.sin(x),), "cos")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def square(a: Tensor) -> Tensor:
    x = a.data
    return _record(x * x, (a,), lambda g: (2.0 * g * x,), "square")


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "sin": sin, "tanh": tanh, "scale": scale}


def elementwise(op_id: str, *args) -> Tensor:
    try:
        fn = _ELEMENTWISE[op_id]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op_id!r}") from None
    return fn(*args)


# ---------------------------------------------------------------- linear algebra / shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    return _record(ad @ bd, (a, b), back, "matmul")


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Join along the last axis; all leading dimensions must agree."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != b.ndim or a.ndim == 0 or a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat: leading dimensions differ, {a.shape} vs {b.shape}")
    p = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)
    return _record(out, (a, b), lambda g: (g[..., :p], g[..., p:]), "concat")


def stack(items: Sequence[Tensor]) -> Tensor:
    items = [as_tensor(t) for t in items]
    if not items:
        raise ContractError("stack needs at least one tensor")
    shape = items[0].shape
    for t in items:
        if t.shape != shape:
            raise DimensionError(f"stack: shapes differ, {shape} vs {t.shape}")
    out = np.stack([t.data for t in items])
    return _record(out, tuple(items), lambda g: tuple(g[i] for i in range(len(items))), "stack")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _record(out, (a,), lambda g: (g.reshape(old),), "reshape")


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit numpy-style broadcast; the gradient is summed back."""
    shape = tuple(shape)
    old = a.shape
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise DimensionError(f"broadcast_to: cannot broadcast {old} to {shape}") from None
    return _record(out, (a,), lambda g: (_sum_to(g, old),), "broadcast_to")


def getitem(a: Tensor, index) -> Tensor:
    old = a.shape

    def back(g):
        full = np.zeros(old)
        np.add.at(full, index, g)
        return (full,)

    return _record(np.array(a.data[index]), (a,), back, "getitem")


def take_rows(a: Tensor, idx) -> Tensor:
    """Gather rows along axis 0 (repeats allowed); backward scatter-adds."""
    idx = np.asarray(idx, dtype=np.int64)
    old = a.shape

    def back(g):
        full = np.zeros(old)
        np.add.at(full, idx, g)
        return (full,)

    return _record(a.data[idx], (a,), back, "take_rows")


# ---------------------------------------------------------------- reductions / losses


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return _record(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape),), "sum")


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return _record(
        np.array(a.data.sum() / n), (a,), lambda g: (np.broadcast_to(g / n, shape),), "mean"
    )


def mse(pred: Tensor, target) -> Tensor:
    """Mean of squared differences, differentiable in both arguments."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target.data
    n = diff.size
    value = np.array(np.dot(diff.reshape(-1), diff.reshape(-1)) / n)

    def back(g):
        gp = (2.0 / n) * g * diff
        return gp, -gp

    return _record(value, (pred, target), back, "mse")


def assert_finite(t, name: str = "tensor") -> None:
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    flat = data.reshape(-1)
    bad = ~np.isfinite(flat)
    if bad.any():
        i = int(np.argmax(bad))
        raise NonFiniteError(f"{name}: non-finite value {flat[i]} at flat index {i}")
