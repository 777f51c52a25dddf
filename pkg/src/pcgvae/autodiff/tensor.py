"""Tensor and tape for reverse-mode differentiation."""

from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_seq = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block (evaluation / generation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@dataclass(eq=False)
class Node:
    seq: int
    op: str
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """Dense array that can take part in a recorded computation.

    Data is float32 unless another floating dtype is requested explicitly;
    gradient checks run the same graph in float64.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_node", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else np.float32
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._node: Node | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def backward(self, grad=None):
        Tape.from_root(self).backward(self, grad)

    # arithmetic sugar; defined in ops to keep a single implementation
    def __add__(self, other):
        from . import ops
        return ops.add(self, other) if isinstance(other, Tensor) else ops.add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other) if isinstance(other, Tensor) else ops.add_scalar(self, -other)

    def __rsub__(self, other):
        from . import ops
        return ops.add_scalar(ops.scale(self, -1.0), other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other) if isinstance(other, Tensor) else ops.scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)


def record(out_data: np.ndarray, inputs: Sequence[Tensor], backward, op: str) -> Tensor:
    """Wrap an op result, recording it when any input needs a gradient."""
    req = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=req, dtype=out_data.dtype)
    if req:
        out._node = Node(seq=next(_seq), op=op, inputs=tuple(inputs), backward=backward)
    return out


@dataclass
class Tape:
    """Recorded operations reachable from a root, in creation order.

    Creation order is a topological order, so backward walks the list in
    exact reverse.
    """

    records: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> Tape:
        seen: set[int] = set()
        found: list[Tensor] = []
        stack = [root]
        while stack:
            t = stack.pop()
            if t._node is None or id(t) in seen:
                continue
            seen.add(id(t))
            found.append(t)
            stack.extend(t._node.inputs)
        found.sort(key=lambda t: t._node.seq)
        return cls(found)

    def __len__(self):
        return len(self.records)

    def backward(self, root: Tensor, grad=None):
        if grad is None:
            if root.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar root")
            grad = np.ones_like(root.data)
        grads: dict[int, np.ndarray] = {id(root): np.asarray(grad, dtype=root.dtype)}
        if root._node is None:
            if root.requires_grad:
                _accumulate_leaf(root, grads[id(root)])
            return
        for t in reversed(self.records):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            in_grads = t._node.backward(g)
            for inp, gi in zip(t._node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                if gi.shape != inp.shape:
                    raise ShapeError(f"{t._node.op}: gradient shape {gi.shape} != input shape {inp.shape}")
                if inp._node is None:
                    _accumulate_leaf(inp, gi)
                elif id(inp) in grads:
                    grads[id(inp)] = grads[id(inp)] + gi
                else:
                    grads[id(inp)] = gi


def _accumulate_leaf(t: Tensor, g: np.ndarray):
    g = g.astype(t.dtype, copy=False)
    t.grad = g.copy() if t.grad is None else t.grad + g
