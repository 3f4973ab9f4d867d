"""Dense float32 tensors and a tape-based reverse-mode engine.

Operations are subclasses of :class:`Function`. Every subclass with a ``name``
is added to :data:`Function.registry`, which the gradient checker walks to
cover all ops. Gradients are only recorded while a :class:`ComputationRecord`
is active on the current thread::

    with ComputationRecord() as rec:
        loss = ops.sum(ops.mul(x, x))
    rec.backward(loss)
"""

from __future__ import annotations

import threading
from typing import ClassVar, Optional, Sequence

import numpy as np

DTYPE = np.float32

_local = threading.local()


def _record_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_record() -> Optional["ComputationRecord"]:
    stack = _record_stack()
    return stack[-1] if stack else None


class Tensor:
    """A float32 array with an optional gradient buffer.

    Leaves created with ``requires_grad=True`` get a zeroed ``grad`` buffer of
    the same shape. Outputs of recorded ops receive their ``grad`` when a
    backward pass reaches them.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.ascontiguousarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.name = name

    @classmethod
    def _from_op(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data if data.dtype == DTYPE else data.astype(DTYPE)
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # Arithmetic sugar; the ops module registers the implementations.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other) if isinstance(other, Tensor) else ops.add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other) if isinstance(other, Tensor) else ops.add_scalar(self, -other)

    def __rsub__(self, other):
        from . import ops
        return ops.add_scalar(ops.neg(self), other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other) if isinstance(other, Tensor) else ops.mul_scalar(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other) if isinstance(other, Tensor) else ops.mul_scalar(self, 1.0 / other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)


def _not_scalar(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


class Function:
    """Base class for differentiable operations.

    Subclasses implement ``forward`` on raw arrays and ``backward`` mapping the
    output gradient to one gradient (or ``None``) per tensor input. Keyword
    arguments to :meth:`apply` are non-differentiable parameters.
    """

    name: ClassVar[str] = ""
    registry: ClassVar[dict] = {}

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if cls.name:
            Function.registry[cls.name] = cls

    def forward(self, *arrays: np.ndarray, **params) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **params) -> Tensor:
        for t in inputs:
            if not isinstance(t, Tensor):
                raise TypeError(f"{cls.name or cls.__name__}: expected Tensor inputs, got {type(t).__name__}")
        fn = cls()
        out = fn.forward(*(t.data for t in inputs), **params)
        record = active_record()
        needs_grad = record is not None and any(t.requires_grad for t in inputs)
        result = Tensor._from_op(np.asarray(out), needs_grad)
        if needs_grad:
            record._append(Node(fn, inputs, result))
        return result


class Node:
    __slots__ = ("fn", "inputs", "output")

    def __init__(self, fn: Function, inputs: Sequence[Tensor], output: Tensor):
        self.fn = fn
        self.inputs = tuple(inputs)
        self.output = output

    @property
    def op(self) -> str:
        return self.fn.name


class ComputationRecord:
    """Ordered log of executed op nodes; a node's inputs always precede it."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "ComputationRecord":
        _record_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _record_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def _append(self, node: Node) -> None:
        self.nodes.append(node)
        self._produced.add(id(node.output))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

        Each recorded node is visited at most once, in reverse execution order.
        Leaf gradients are added to, never overwritten; zeroing is the caller's job.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise ValueError("loss was not produced inside this computation record")
        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = pending.pop(id(node.output), None)
            if g is None:
                continue
            node.output.grad = g
            in_grads = node.fn.backward(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                gi = np.asarray(gi, dtype=DTYPE)
                if gi.shape != inp.data.shape:
                    raise RuntimeError(
                        f"{node.op}: backward produced grad of shape {gi.shape} for input {inp.shape}"
                    )
                key = id(inp)
                if key in self._produced:
                    prev = pending.get(key)
                    pending[key] = gi if prev is None else prev + gi
                elif inp.grad is None:
                    inp.grad = gi.copy()
                else:
                    inp.grad += gi


def backward(loss: Tensor, record: ComputationRecord) -> None:
    record.backward(loss)


def tensor(data, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)
