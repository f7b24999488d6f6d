"""Tensor, Function and Tape: the recording side of the autodiff core.

Operations on tensors run eagerly on numpy arrays.  When a :class:`Tape` is
active (``with Tape() as tape:``) and at least one operand requires a gradient,
the operation is appended to the tape together with the intermediates its
backward rule needs.  ``tape.backward(loss)`` then walks the records in reverse
order.  Without an active tape nothing is recorded, which is how inference runs.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from ..errors import ContractError, DimensionError, NumericError

_local = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


def _all_finite(a: np.ndarray) -> bool:
    if a.dtype.kind not in "fc":
        return True
    if a.size <= 4096:
        return bool(np.isfinite(a).all())
    # any NaN/inf makes the sum non-finite; a finite sum proves the array is finite
    with np.errstate(over="ignore", invalid="ignore"):
        if math.isfinite(float(a.sum())):
            return True
    return bool(np.isfinite(a).all())


class Tensor:
    """Dense real array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data: Any, requires_grad: bool = False, dtype: Any = None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if requires_grad and arr.dtype.kind != "f":
            raise ContractError(f"only floating tensors can require grad, got {arr.dtype}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar; implementations live in functional ---------------
    def __add__(self, other):
        return F.add(self, other)

    def __radd__(self, other):
        return F.add(other, self)

    def __sub__(self, other):
        return F.sub(self, other)

    def __rsub__(self, other):
        return F.sub(other, self)

    def __mul__(self, other):
        return F.mul(self, other)

    def __rmul__(self, other):
        return F.mul(other, self)

    def __truediv__(self, other):
        return F.div(self, other)

    def __rtruediv__(self, other):
        return F.div(other, self)

    def __neg__(self):
        return F.neg(self)

    def __matmul__(self, other):
        return F.matmul(self, other)

    def __rmatmul__(self, other):
        return F.matmul(other, self)

    def __getitem__(self, index):
        return F.getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return F.sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes):
        return F.transpose(self, axes or None)

    @property
    def T(self):
        return F.transpose(self, None)


def as_tensor(x: Any, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None and like.dtype.kind == "f" else None
    return Tensor(np.asarray(x, dtype=dtype))


class Function:
    """A differentiable primitive.

    Subclasses implement ``forward(*arrays, **attrs)`` returning an array (or a
    tuple of arrays for multi-output primitives) and ``backward(*grads)``
    returning one gradient per tensor input, ``None`` where no gradient flows.
    Non-differentiable attributes (masks, ids, axes) travel as keyword
    arguments so that a record can be replayed.
    """

    name = "function"

    @classmethod
    def apply(cls, *inputs: Tensor, **attrs: Any):
        fn = cls()
        arrays = [t.data for t in inputs]
        try:
            # overflow shows up as a non-finite output and is reported below
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                out = fn.forward(*arrays, **attrs)
        except ValueError as exc:
            shapes = " and ".join(str(a.shape) for a in arrays)
            raise DimensionError(f"{cls.name}: incompatible shapes {shapes} ({exc})") from exc
        multi = isinstance(out, tuple)
        outs = out if multi else (out,)
        for o in outs:
            if not _all_finite(o):
                raise NumericError(f"{cls.name}: non-finite output")
        tape = active_tape()
        track = tape is not None and any(t.requires_grad for t in inputs)
        tensors = tuple(Tensor(o, requires_grad=track) for o in outs)
        if track:
            tape._append(fn, inputs, tensors, attrs)
        return tensors if multi else tensors[0]

    def forward(self, *arrays: np.ndarray, **attrs: Any):  # pragma: no cover - abstract
        raise NotImplementedError

    def backward(self, *grads: np.ndarray | None):  # pragma: no cover - abstract
        raise NotImplementedError


@dataclass
class Record:
    fn: Function
    inputs: tuple[Tensor, ...]
    outputs: tuple[Tensor, ...]
    attrs: dict[str, Any] = field(default_factory=dict)

    @property
    def op(self) -> str:
        return self.fn.name


class Tape:
    """Ordered log of primitive applications (the computation record).

    Records are appended in execution order, so every input of record ``i`` is
    either a leaf or an output of some record ``j < i``.
    """

    def __init__(self) -> None:
        self.records: list[Record] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def _append(self, fn: Function, inputs: Sequence[Tensor], outputs: Sequence[Tensor], attrs: dict) -> None:
        self.records.append(Record(fn, tuple(inputs), tuple(outputs), attrs))
        for o in outputs:
            self._produced.add(id(o))

    def leaves(self) -> list[Tensor]:
        """Tensors requiring grad that were consumed but not produced on this tape."""
        seen: set[int] = set()
        out = []
        for rec in self.records:
            for t in rec.inputs:
                if t.requires_grad and id(t) not in self._produced and id(t) not in seen:
                    seen.add(id(t))
                    out.append(t)
        return out

    def backward(self, loss: Tensor, params: Sequence[Tensor] = ()) -> None:
        """Populate ``.grad`` on every leaf of the tape (and on ``params``).

        Leaves that do not influence ``loss`` get a zero gradient.  Existing
        ``.grad`` values are overwritten, not accumulated.
        """
        if loss.data.size != 1 or loss.data.ndim > 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise ContractError("loss was not produced on this tape")
        if not math.isfinite(float(loss.data)):
            raise NumericError("loss is not finite")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self.records):
            gouts = [grads.pop(id(o), None) for o in rec.outputs]
            if all(g is None for g in gouts):
                continue
            gins = rec.fn.backward(*gouts)
            for inp, g in zip(rec.inputs, gins):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                prev = grads.get(key)
                grads[key] = g if prev is None else prev + g
        targets = {id(t): t for t in self.leaves()}
        for p in params:
            if p.requires_grad:
                targets[id(p)] = p
        for key, t in targets.items():
            g = grads.get(key)
            if g is None:
                t.grad = np.zeros_like(t.data)
            else:
                g = np.asarray(g, dtype=t.data.dtype)
                if g.shape != t.data.shape:
                    raise DimensionError(f"backward: gradient shape {g.shape} != tensor shape {t.data.shape}")
                t.grad = g

    def replay(self) -> list[tuple[np.ndarray, ...]]:
        """Re-run every record forward from its recorded input values."""
        results = []
        for rec in self.records:
            fn = type(rec.fn)()
            out = fn.forward(*(t.data for t in rec.inputs), **rec.attrs)
            results.append(out if isinstance(out, tuple) else (out,))
        return results


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor] = ()) -> None:
    tape.backward(loss, params)


from . import functional as F  # noqa: E402  (circular: functional imports Tensor)
