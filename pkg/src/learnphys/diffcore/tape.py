"""Define-by-run reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records every operation whose inputs include a taped
:class:`Tensor`.  Operations on plain arrays (or untaped tensors) are evaluated
eagerly and nothing is recorded, which keeps evaluation-only code paths cheap.

Each recorded node stores its op kind, the ids of its inputs (or the constant
arrays it consumed), the attributes of the op and the cached forward value.
That is enough to run the backward pass and to replay the forward pass from the
leaves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""


@dataclass
class TapeNode:
    kind: str
    inputs: tuple  # int (node id) or np.ndarray (constant)
    attrs: dict
    value: np.ndarray
    name: str | None = None


@dataclass
class OpDef:
    forward: Callable[..., np.ndarray]
    vjp: Callable[..., tuple]
    check: Callable[..., None] | None = None


OPS: dict[str, OpDef] = {}


def register(kind, forward, vjp, check=None):
    OPS[kind] = OpDef(forward, vjp, check)


class Tensor:
    """A value, optionally living on a tape."""

    __slots__ = ("value", "tape", "index")
    __array_priority__ = 100  # make ndarray (op) Tensor defer to Tensor

    def __init__(self, value, tape: Tape | None = None, index: int = -1):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return self.value.shape[0]

    def __repr__(self):
        where = f"node {self.index}" if self.tape is not None else "untaped"
        return f"Tensor({where}, shape={self.value.shape})"

    def numpy(self) -> np.ndarray:
        return self.value

    # operator sugar; the functional forms live in ops.py
    def __add__(self, other):
        return apply("add", self, other)

    def __radd__(self, other):
        return apply("add", other, self)

    def __sub__(self, other):
        return apply("sub", self, other)

    def __rsub__(self, other):
        return apply("sub", other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return apply("scalar_mul", self, c=float(other))
        return apply("mul", self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return apply("scalar_mul", self, c=float(other))
        return apply("mul", other, self)

    def __truediv__(self, other):
        if np.isscalar(other):
            return apply("scalar_mul", self, c=1.0 / float(other))
        return apply("div", self, other)

    def __matmul__(self, other):
        return apply("matmul", self, other)

    def __rmatmul__(self, other):
        return apply("matmul", other, self)

    def __neg__(self):
        return apply("scalar_mul", self, c=-1.0)


def value_of(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.value
    return np.asarray(x, dtype=DTYPE)


def apply(kind: str, *inputs, **attrs) -> Tensor:
    """Evaluate op ``kind`` and record it if any input is taped."""
    op = OPS[kind]
    tape = None
    vals = []
    for x in inputs:
        if isinstance(x, Tensor):
            vals.append(x.value)
            if x.tape is not None:
                if tape is not None and x.tape is not tape:
                    raise ValueError("operands belong to different tapes")
                tape = x.tape
        else:
            vals.append(np.asarray(x, dtype=DTYPE))
    if op.check is not None:
        op.check(*vals, **attrs)
    out = op.forward(*vals, **attrs)
    if tape is None:
        return Tensor(out)
    return tape._record(kind, inputs, vals, attrs, out)


class Tape:
    """Topologically ordered record of a computation."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self._leaves: dict[str, int] = {}

    def __len__(self):
        return len(self.nodes)

    def param(self, value, name: str | None = None) -> Tensor:
        """Register a differentiable leaf."""
        arr = np.array(value, dtype=DTYPE)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"leaf {name!r} has non-finite entries")
        idx = len(self.nodes)
        self.nodes.append(TapeNode("leaf", (), {}, arr, name))
        if name is not None:
            if name in self._leaves:
                raise ValueError(f"duplicate leaf name {name!r}")
            self._leaves[name] = idx
        return Tensor(arr, self, idx)

    def params(self, values: dict[str, np.ndarray]) -> dict[str, Tensor]:
        return {k: self.param(v, k) for k, v in values.items()}

    def _record(self, kind, inputs, vals, attrs, out) -> Tensor:
        refs = tuple(
            x.index if isinstance(x, Tensor) and x.tape is self else v
            for x, v in zip(inputs, vals)
        )
        idx = len(self.nodes)
        self.nodes.append(TapeNode(kind, refs, attrs, out))
        return Tensor(out, self, idx)

    def backward(self, loss: Tensor, wrt=None) -> dict:
        """Reverse sweep from a scalar ``loss``.

        Returns gradients keyed by leaf name (all named leaves, zeros for the
        ones not reachable from ``loss``).  ``wrt`` may list extra tensors whose
        gradients are returned keyed by the tensor's node id.
        """
        if loss.tape is not self:
            raise ValueError("loss is not recorded on this tape")
        if loss.value.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        grads: list[Any] = [None] * (loss.index + 1)
        grads[loss.index] = np.ones_like(loss.value)
        nodes = self.nodes
        for i in range(loss.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = nodes[i]
            if node.kind == "leaf":
                continue
            refs = node.inputs
            needs = tuple(isinstance(r, int) for r in refs)
            if not any(needs):
                continue
            vals = [nodes[r].value if isinstance(r, int) else r for r in refs]
            in_grads = OPS[node.kind].vjp(g, node.value, vals, needs, **node.attrs)
            for r, ig in zip(refs, in_grads):
                if ig is None or not isinstance(r, int):
                    continue
                if grads[r] is None:
                    grads[r] = ig
                else:
                    grads[r] = grads[r] + ig
        out = {}
        for name, idx in self._leaves.items():
            g = grads[idx] if idx < len(grads) else None
            out[name] = np.zeros_like(nodes[idx].value) if g is None else g
        if wrt is not None:
            for t in wrt:
                g = grads[t.index] if t.index < len(grads) else None
                out[t.index] = np.zeros_like(t.value) if g is None else g
        return out

    def replay(self) -> list[np.ndarray]:
        """Re-run every recorded op from the leaves; returns the new values."""
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.kind == "leaf":
                values.append(node.value)
                continue
            vals = [values[r] if isinstance(r, int) else r for r in node.inputs]
            values.append(OPS[node.kind].forward(*vals, **node.attrs))
        return values


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    return tape.backward(loss)
