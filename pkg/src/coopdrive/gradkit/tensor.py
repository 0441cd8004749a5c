"""Dense tensors with tape-based reverse-mode differentiation.

Every operation whose inputs require gradients appends its output node to the
active :class:`ComputationTape`. :func:`backward` replays the tape in reverse
order and clears it afterwards.
"""
from __future__ import annotations

import threading

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(RuntimeError):
    """Raised when an operation is called outside its preconditions."""


class NumericError(FloatingPointError):
    """Raised on NaN/Inf where finite values are required."""


class ComputationTape:
    """Ordered record of the differentiable operations executed so far."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def record(self, node: "Tensor") -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        for node in self.nodes:
            node._parents = ()
            node._backward = None
        self.nodes = []

    def __len__(self):
        return len(self.nodes)


_local = threading.local()


def current_tape() -> ComputationTape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = ComputationTape()
    return tape


class no_grad:
    """Context manager disabling tape recording (rollouts, evaluation)."""

    def __enter__(self):
        self._prev = getattr(_local, "disabled", False)
        _local.disabled = True
        return self

    def __exit__(self, *exc):
        _local.disabled = self._prev
        return False


def _recording() -> bool:
    return not getattr(_local, "disabled", False)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_gbuf")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32 if dtype is None else dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._parents: tuple = ()
        self._backward = None
        self._gbuf = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar; implementations live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.mul(self, 1.0 / other) if np.isscalar(other) else ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def _raise_not_scalar(t: Tensor):
    raise ContractError(f"expected a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64) if np.isscalar(x) else x)


def make_node(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    """Wrap an op result; record it on the tape if any parent needs gradients.

    ``backward_fn(g)`` receives the output gradient and returns one gradient
    (or None) per parent.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._gbuf = None
    needs = _recording() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = parents
        out._backward = backward_fn
        current_tape().record(out)
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(node: Tensor, g: np.ndarray) -> None:
    if node.is_leaf:
        if node.grad is None:
            node.grad = np.zeros_like(node.data)
        node.grad += g.astype(node.data.dtype, copy=False)
    elif node._gbuf is None:
        node._gbuf = np.array(g, dtype=node.data.dtype, copy=True)
    else:
        node._gbuf += g


def backward(loss: Tensor, tape: ComputationTape | None = None) -> None:
    """Populate ``grad`` of every requires-grad leaf reachable from ``loss``.

    Leaf gradients are reset to zero first, so each call yields d(loss)/d(leaf)
    for this loss alone. The tape is cleared afterwards.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape if tape is not None else current_tape()
    if not loss.requires_grad:
        tape.clear()
        return
    leaves = {}
    for node in tape.nodes:
        for p in node._parents:
            if p.requires_grad and p.is_leaf:
                leaves[id(p)] = p
    for leaf in leaves.values():
        leaf.grad = np.zeros_like(leaf.data)

    if loss.is_leaf:
        loss.grad = np.ones_like(loss.data)
        tape.clear()
        return
    loss._gbuf = np.ones_like(loss.data)
    try:
        for node in reversed(tape.nodes):
            g = node._gbuf
            if g is None:
                continue
            node._gbuf = None
            grads = node._backward(g)
            for parent, pg in zip(node._parents, grads):
                if pg is not None and parent.requires_grad:
                    _accumulate(parent, pg)
    finally:
        for node in tape.nodes:
            node._gbuf = None
        tape.clear()
