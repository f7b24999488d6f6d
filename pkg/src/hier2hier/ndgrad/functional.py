"""Differentiable primitives.

Besides the elementary operations there are a few fused ones (``lstm_cell``,
``additive_score``, ``weighted_sum``, ``linear``) that keep the number of
records per decoding step small; each is grad-checked like the rest.
"""

from __future__ import annotations

from typing import Any, Sequence

import numpy as np
from scipy.special import expit

from ..errors import ContractError, DimensionError
from .tensor import Function, Tensor, as_tensor


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


class Add(Function):
    name = "add"

    def forward(self, a, b):
        self.shapes = a.shape, b.shape
        return a + b

    def backward(self, g):
        sa, sb = self.shapes
        return _unbroadcast(g, sa), _unbroadcast(g, sb)


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        self.shapes = a.shape, b.shape
        return a - b

    def backward(self, g):
        sa, sb = self.shapes
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, g):
        return _unbroadcast(g * self.b, self.a.shape), _unbroadcast(g * self.a, self.b.shape)


class Div(Function):
    name = "div"

    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, g):
        a, b = self.a, self.b
        return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


class Neg(Function):
    name = "neg"

    def forward(self, a):
        return -a

    def backward(self, g):
        return (-g,)


def add(a, b) -> Tensor:
    return Add.apply(*_pair(a, b))


def sub(a, b) -> Tensor:
    return Sub.apply(*_pair(a, b))


def mul(a, b) -> Tensor:
    return Mul.apply(*_pair(a, b))


def div(a, b) -> Tensor:
    return Div.apply(*_pair(a, b))


def neg(a: Tensor) -> Tensor:
    return Neg.apply(a)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim == 0 or b.ndim == 0:
            raise ValueError("matmul operands must be at least 1-d")
        ka = a.shape[-1]
        kb = b.shape[0] if b.ndim == 1 else b.shape[-2]
        if ka != kb:
            raise ValueError(f"inner dimensions {ka} and {kb} differ")
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, g):
        a, b = self.a, self.b
        a2 = a[None, :] if a.ndim == 1 else a
        b2 = b[:, None] if b.ndim == 1 else b
        g2 = g
        if a.ndim == 1:
            g2 = np.expand_dims(g2, -2 if b.ndim > 1 else -1)
        if b.ndim == 1:
            g2 = g2[..., None]
        ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
        gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
        if a.ndim == 1:
            ga = ga[..., 0, :]
        if b.ndim == 1:
            gb = gb[..., 0]
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


class Linear(Function):
    """``x @ w + b`` over the last axis of ``x``."""

    name = "linear"

    def forward(self, x, w, b):
        if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
            raise ValueError(f"x {x.shape}, w {w.shape}, b {b.shape}")
        self.x, self.w = x, w
        return x @ w + b

    def backward(self, g):
        x, w = self.x, self.w
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ w.T
        gw = x.reshape(-1, x.shape[-1]).T @ g2
        gb = g2.sum(axis=0)
        return gx, gw, gb


def matmul(a, b) -> Tensor:
    return MatMul.apply(*_pair(a, b))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return Linear.apply(x, w, b)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


class Sum(Function):
    name = "sum"

    def forward(self, a, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, g):
        if self.axis is not None and not self.keepdims:
            axes = self.axis if isinstance(self.axis, tuple) else (self.axis,)
            axes = tuple(ax % len(self.shape) for ax in axes)
            for ax in sorted(axes):
                g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, self.shape),)


class Reshape(Function):
    name = "reshape"

    def forward(self, a, shape=()):
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, g):
        return (g.reshape(self.shape),)


class Transpose(Function):
    name = "transpose"

    def forward(self, a, axes=None):
        self.axes = axes
        return np.transpose(a, axes)

    def backward(self, g):
        if self.axes is None:
            return (np.transpose(g),)
        return (np.transpose(g, np.argsort(self.axes)),)


class GetItem(Function):
    name = "getitem"

    def forward(self, a, index=None):
        self.shape, self.dtype, self.index = a.shape, a.dtype, index
        return a[index]

    def backward(self, g):
        out = np.zeros(self.shape, dtype=self.dtype)
        idx = self.index if isinstance(self.index, tuple) else (self.index,)
        if all(i is None or i is Ellipsis or isinstance(i, (int, slice)) for i in idx):
            out[self.index] = g  # basic indexing never repeats an element
        else:
            np.add.at(out, self.index, g)
        return (out,)


class Concat(Function):
    name = "concat"

    def forward(self, *arrays, axis=-1):
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, g):
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(g, cuts, axis=self.axis))


class Stack(Function):
    name = "stack"

    def forward(self, *arrays, axis=0):
        self.axis = axis
        return np.stack(arrays, axis=axis)

    def backward(self, g):
        n = g.shape[self.axis]
        return tuple(np.take(g, i, axis=self.axis) for i in range(n))


class Unstack(Function):
    name = "unstack"

    def forward(self, a, axis=0):
        self.axis, self.shape, self.dtype = axis, a.shape, a.dtype
        return tuple(np.take(a, i, axis=axis) for i in range(a.shape[axis]))

    def backward(self, *grads):
        out_shape = list(self.shape)
        del out_shape[self.axis]
        zero = None
        parts = []
        for g in grads:
            if g is None:
                if zero is None:
                    zero = np.zeros(out_shape, dtype=self.dtype)
                g = zero
            parts.append(g)
        return (np.stack(parts, axis=self.axis),)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a: Tensor, axes=None) -> Tensor:
    return Transpose.apply(a, axes=None if axes is None else tuple(axes))


def getitem(a: Tensor, index) -> Tensor:
    return GetItem.apply(a, index=index)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Stack.apply(*tensors, axis=axis)


def unstack(a: Tensor, axis: int = 0) -> tuple[Tensor, ...]:
    out = Unstack.apply(a, axis=axis)
    return out if isinstance(out, tuple) else (out,)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, a):
        self.y = expit(a)
        return self.y

    def backward(self, g):
        y = self.y
        return (g * y * (1 - y),)


class LogSigmoid(Function):
    name = "log_sigmoid"

    def forward(self, a):
        self.a = a
        return -np.logaddexp(0, -a)

    def backward(self, g):
        return (g * expit(-self.a),)


class Tanh(Function):
    name = "tanh"

    def forward(self, a):
        self.y = np.tanh(a)
        return self.y

    def backward(self, g):
        return (g * (1 - self.y * self.y),)


class Exp(Function):
    name = "exp"

    def forward(self, a):
        self.y = np.exp(a)
        return self.y

    def backward(self, g):
        return (g * self.y,)


class Log(Function):
    name = "log"

    def forward(self, a):
        self.a = a
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(a)

    def backward(self, g):
        return (g / self.a,)


def sigmoid(a: Tensor) -> Tensor:
    return Sigmoid.apply(as_tensor(a))


def log_sigmoid(a: Tensor) -> Tensor:
    return LogSigmoid.apply(as_tensor(a))


def tanh(a: Tensor) -> Tensor:
    return Tanh.apply(as_tensor(a))


def exp(a: Tensor) -> Tensor:
    return Exp.apply(as_tensor(a))


def log(a: Tensor) -> Tensor:
    return Log.apply(as_tensor(a))


# ---------------------------------------------------------------------------
# masked reductions
# ---------------------------------------------------------------------------


class MaskedMean(Function):
    """Mean over ``axis`` counting only positions where ``mask`` is nonzero.

    ``mask`` must broadcast against ``x``.  An all-masked slice averages to 0.
    """

    name = "masked_mean"

    def forward(self, x, mask=None, axis=-1):
        m = np.broadcast_to(np.asarray(mask, dtype=x.dtype), x.shape)
        count = np.maximum(m.sum(axis=axis, keepdims=True), 1)
        self.m, self.count, self.axis = m, count, axis
        return (x * m).sum(axis=axis) / np.squeeze(count, axis=axis)

    def backward(self, g):
        g = np.expand_dims(g, self.axis)
        return (g * self.m / self.count,)


class MaskedSoftmax(Function):
    """Softmax over ``axis``; masked positions get probability exactly 0."""

    name = "masked_softmax"

    def forward(self, x, mask=None, axis=-1):
        self.axis = axis
        if mask is None:
            z = x - x.max(axis=axis, keepdims=True)
            e = np.exp(z)
        else:
            keep = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
            z = np.where(keep, x, -np.inf)
            top = z.max(axis=axis, keepdims=True)
            top = np.where(np.isfinite(top), top, 0)
            e = np.where(keep, np.exp(np.where(keep, z - top, 0)), 0)
        s = e.sum(axis=axis, keepdims=True)
        self.y = e / np.where(s == 0, 1, s)
        return self.y

    def backward(self, g):
        y = self.y
        return (y * (g - (g * y).sum(axis=self.axis, keepdims=True)),)


def masked_mean(x: Tensor, mask: Any, axis: int = -1) -> Tensor:
    return MaskedMean.apply(x, mask=np.asarray(mask), axis=axis)


def masked_softmax(x: Tensor, mask: Any = None, axis: int = -1) -> Tensor:
    return MaskedSoftmax.apply(x, mask=None if mask is None else np.asarray(mask), axis=axis)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return MaskedSoftmax.apply(x, mask=None, axis=axis)


# ---------------------------------------------------------------------------
# lookup, dropout, losses
# ---------------------------------------------------------------------------


class Embedding(Function):
    name = "embedding"

    def forward(self, weight, ids=None):
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
            raise ContractError(f"embedding: ids outside [0, {weight.shape[0]})")
        self.ids, self.wshape, self.dtype = ids, weight.shape, weight.dtype
        return weight[ids]

    def backward(self, g):
        gw = np.zeros(self.wshape, dtype=self.dtype)
        flat = self.ids.ravel()
        if flat.size:
            rows = g.reshape(flat.size, -1)
            order = np.argsort(flat, kind="stable")
            uniq, starts = np.unique(flat[order], return_index=True)
            gw[uniq] = np.add.reduceat(rows[order], starts, axis=0)
        return (gw,)


class Dropout(Function):
    name = "dropout"

    def forward(self, x, mask=None):
        self.mask = mask
        return x * mask

    def backward(self, g):
        return (g * self.mask,)


class CrossEntropy(Function):
    """Per-position negative log-likelihood of ``targets`` under softmax(logits)."""

    name = "cross_entropy"

    def forward(self, logits, targets=None, mask=None):
        targets = np.asarray(targets)
        if logits.shape[:-1] != targets.shape:
            raise ValueError(f"logits {logits.shape} vs targets {targets.shape}")
        z = logits - logits.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
        logp = z - lse
        picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
        m = np.ones(targets.shape, dtype=logits.dtype) if mask is None else np.asarray(mask, dtype=logits.dtype)
        self.p, self.targets, self.m = np.exp(logp), targets, m
        return -picked * m

    def backward(self, g):
        grad = self.p.copy()
        np.put_along_axis(grad, self.targets[..., None], np.take_along_axis(grad, self.targets[..., None], axis=-1) - 1, axis=-1)
        return (grad * (g * self.m)[..., None],)


class BCEWithLogits(Function):
    """Per-element binary cross-entropy of ``sigmoid(logits)`` against ``labels``."""

    name = "bce_with_logits"

    def forward(self, logits, labels=None, mask=None):
        y = np.asarray(labels, dtype=logits.dtype)
        m = np.ones_like(logits) if mask is None else np.asarray(mask, dtype=logits.dtype)
        self.x, self.y, self.m = logits, y, m
        loss = np.maximum(logits, 0) - logits * y + np.log1p(np.exp(-np.abs(logits)))
        return loss * m

    def backward(self, g):
        return ((expit(self.x) - self.y) * g * self.m,)


def embedding(weight: Tensor, ids: Any) -> Tensor:
    return Embedding.apply(weight, ids=np.asarray(ids))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None = None, train: bool = False) -> Tensor:
    """Inverted dropout; the identity in eval mode or when ``rate == 0``."""
    if not train or rate <= 0:
        return x
    if rng is None:
        raise ContractError("dropout in train mode needs a generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1 - rate)
    return Dropout.apply(x, mask=keep)


def cross_entropy(logits: Tensor, targets: Any, mask: Any = None) -> Tensor:
    return CrossEntropy.apply(logits, targets=np.asarray(targets), mask=None if mask is None else np.asarray(mask))


def bce_with_logits(logits: Tensor, labels: Any, mask: Any = None) -> Tensor:
    return BCEWithLogits.apply(logits, labels=np.asarray(labels), mask=None if mask is None else np.asarray(mask))


# ---------------------------------------------------------------------------
# fused recurrent / attention kernels
# ---------------------------------------------------------------------------


class LSTMCell(Function):
    """One LSTM step from gate pre-activations ``z = [i, f, g, o]``.

    Rows whose ``mask`` is 0 carry ``(h_prev, c_prev)`` through unchanged,
    which is how padded positions are skipped.
    """

    name = "lstm_cell"

    def forward(self, z, c_prev, h_prev, mask=None):
        hd = c_prev.shape[-1]
        if z.shape[-1] != 4 * hd or z.shape[:-1] != c_prev.shape[:-1] or h_prev.shape != c_prev.shape:
            raise ValueError(f"z {z.shape}, c {c_prev.shape}, h {h_prev.shape}")
        i = expit(z[..., :hd])
        f = expit(z[..., hd : 2 * hd])
        gg = np.tanh(z[..., 2 * hd : 3 * hd])
        o = expit(z[..., 3 * hd :])
        c = f * c_prev + i * gg
        tc = np.tanh(c)
        h = o * tc
        self.cache = (i, f, gg, o, tc, c_prev)
        self.mask = None
        if mask is not None:
            m = np.asarray(mask, dtype=z.dtype)[..., None]
            self.mask = m
            keep = m > 0
            h = np.where(keep, h, h_prev)
            c = np.where(keep, c, c_prev)
        return h, c

    def backward(self, dh, dc):
        i, f, gg, o, tc, c_prev = self.cache
        if dh is None:
            dh = np.zeros_like(tc)
        if dc is None:
            dc = np.zeros_like(tc)
        m = self.mask
        if m is not None:
            pass_h, pass_c = dh * (1 - m), dc * (1 - m)
            dh, dc = dh * m, dc * m
        dct = dc + dh * o * (1 - tc * tc)
        dz = np.concatenate(
            [dct * gg * i * (1 - i), dct * c_prev * f * (1 - f), dct * i * (1 - gg * gg), dh * tc * o * (1 - o)],
            axis=-1,
        )
        dc_prev = dct * f
        if m is None:
            return dz, dc_prev, None
        return dz, dc_prev + pass_c, pass_h


class AdditiveScore(Function):
    """``v . tanh(keys + query)`` with ``query`` broadcast over the key axis.

    keys: (..., N, A), query: (..., A), v: (A,) -> scores (..., N).
    """

    name = "additive_score"

    def forward(self, keys, query, v):
        if keys.shape[-1] != query.shape[-1] or v.shape != (keys.shape[-1],):
            raise ValueError(f"keys {keys.shape}, query {query.shape}, v {v.shape}")
        t = np.tanh(keys + query[..., None, :])
        self.t, self.v = t, v
        self.kshape, self.qshape = keys.shape, query.shape
        return t @ v

    def backward(self, g):
        t = self.t
        gt = (g[..., None] * self.v) * (1 - t * t)
        gkeys = _unbroadcast(gt, self.kshape)
        gquery = _unbroadcast(gt.sum(axis=-2), self.qshape)
        gv = np.tensordot(g, t, axes=(tuple(range(g.ndim)), tuple(range(g.ndim))))
        return gkeys, gquery, gv


class WeightedSum(Function):
    """``sum_n w[..., n] * values[..., n, :]``."""

    name = "weighted_sum"

    def forward(self, w, values):
        if w.shape != values.shape[:-1]:
            raise ValueError(f"weights {w.shape} vs values {values.shape}")
        self.w, self.values = w, values
        return np.matmul(w[..., None, :], values)[..., 0, :]

    def backward(self, g):
        gw = np.matmul(self.values, g[..., :, None])[..., 0]
        gvalues = self.w[..., :, None] * g[..., None, :]
        return gw, gvalues


def lstm_cell(z: Tensor, c_prev: Tensor, h_prev: Tensor, mask: Any = None) -> tuple[Tensor, Tensor]:
    return LSTMCell.apply(z, c_prev, h_prev, mask=None if mask is None else np.asarray(mask))


def additive_score(keys: Tensor, query: Tensor, v: Tensor) -> Tensor:
    return AdditiveScore.apply(keys, query, v)


def weighted_sum(w: Tensor, values: Tensor) -> Tensor:
    return WeightedSum.apply(w, values)


def check_same_shape(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ")
