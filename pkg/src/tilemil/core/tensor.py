"""Dense tensors, the differentiation tape and the reverse pass.

A `Tensor` wraps a numpy array. Operations in :mod:`tilemil.core.ops`
record themselves on the innermost active `Tape` when at least one input
requires a gradient; with no tape active nothing is retained, so
intermediates are released as soon as Python drops them.
"""
from __future__ import annotations

import weakref
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from ..errors import NonFiniteError, UsageError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_TAPES: list["Tape"] = []
_TRACKERS: list["AllocationTracker"] = []


class AllocationTracker:
    """Interface for objects that want to observe tensor allocations."""

    def track(self, tensor: "Tensor") -> None:  # pragma: no cover - interface
        raise NotImplementedError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        if _TRACKERS:
            _TRACKERS[-1].track(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # Operator sugar; the implementations live in ops.
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

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.take(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


@dataclass
class Node:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn


@dataclass
class Tape:
    """Ordered record of primitive operations.

    Nodes are appended in execution order, so inputs always precede the
    node that consumes them. A tape is built by one forward pass and
    consumed by `backward`; it is never replayed.
    """

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPES.pop()
        assert popped is self

    def record(self, output: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn) -> None:
        self.nodes.append(Node(output, inputs, backward))

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


@contextmanager
def no_tape() -> Iterator[None]:
    """Suspend recording for the enclosed block."""
    saved = list(_TAPES)
    _TAPES.clear()
    try:
        yield
    finally:
        _TAPES.extend(saved)


@contextmanager
def tracking(tracker: AllocationTracker) -> Iterator[AllocationTracker]:
    _TRACKERS.append(tracker)
    try:
        yield tracker
    finally:
        _TRACKERS.pop()


def finalize_on_release(tensor: Tensor, callback: Callable, *args) -> None:
    weakref.finalize(tensor, callback, *args)


def check_finite(data: np.ndarray, op: str) -> None:
    if data.dtype.kind == "f" and not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")


def make_result(data: np.ndarray, inputs: tuple[Tensor, ...], backward: BackwardFn, op: str) -> Tensor:
    """Wrap an op's output and record it when a tape is listening."""
    check_finite(data, op)
    out = Tensor(data, name=op)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward)
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Propagate d(loss)/d(leaf) into ``leaf.grad`` for every leaf on the tape.

    Gradients accumulate into existing ``.grad`` buffers, so calling this
    twice without zeroing doubles them.
    """
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss was not recorded on a tape")
    produced = {id(node.output) for node in tape.nodes}
    if id(loss) not in produced:
        raise UsageError("loss was not recorded on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if id(inp) in produced:
                key = id(inp)
                grads[key] = grads[key] + gi if key in grads else gi
            else:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
