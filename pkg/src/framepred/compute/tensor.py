"""Tensor with a reverse-mode tape, and the named parameter store."""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterable, Iterator

import numpy as np

BackwardFn = Callable[[np.ndarray], None]


class Tensor:
    """Dense array plus an optional gradient buffer.

    Tensors produced by ops remember their parents and a closure that pushes
    the output gradient back into them. ``backward`` walks that graph once in
    reverse topological order.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: BackwardFn | None = None,
        name: str | None = None,
    ):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = _toposort(self)
        _accumulate(self, np.asarray(grad, dtype=self.dtype))
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)
            # interior buffers are not needed once propagated
            node.grad = None

    # arithmetic used by the loss combinators
    def __add__(self, other):
        from . import ops

        return ops.add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.add(self, ops.scale(_as_tensor(other, self.dtype), -1.0))

    def __mul__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)


def _as_tensor(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        raise ValueError(f"gradient shape {g.shape} does not match tensor shape {t.data.shape}")
    if t.grad is None:
        t.grad = np.array(g, dtype=t.dtype, copy=True)
    else:
        t.grad += g


def make_result(
    data: np.ndarray, parents: Iterable[Tensor], backward: BackwardFn
) -> Tensor:
    """Wrap an op output; the tape entry is dropped when no parent needs grads."""
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


class ParamStore:
    """Ordered, uniquely named trainable tensors and an update counter."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        data = np.array(value, dtype=self.dtype, copy=True)
        t = Tensor(data, requires_grad=True, name=name)
        t.grad = np.zeros_like(data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def num_scalars(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad[...] = 0

    def frozen(self) -> "ParamStore":
        """View whose tensors carry no tape, so nothing flows into them."""
        view = ParamStore(self.dtype)
        for name, t in self._params.items():
            view._params[name] = Tensor(t.data, name=name)
        view.step = self.step
        return view

    def copy(self, dtype=None) -> "ParamStore":
        out = ParamStore(self.dtype if dtype is None else dtype)
        for name, t in self._params.items():
            out.add(name, t.data)
        out.step = self.step
        return out

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.data) for k, t in self._params.items())


def sgd_step(params: ParamStore, lr: float) -> None:
    """In-place ``w -= lr * grad`` for every parameter, then clear gradients."""
    for name, t in params.items():
        if t.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient buffer")
    lr_ = params.dtype.type(lr)
    for t in params._params.values():
        t.data -= lr_ * t.grad
        t.grad[...] = 0
    params.step += 1
