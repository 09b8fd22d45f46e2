"""Dense float64 tensors with reverse-mode automatic differentiation.

The design is a classic gradient tape: while a :class:`Tape` is active (used
as a context manager), every operation whose inputs participate in
differentiation records a node holding the input/output tensors and a
backward rule. ``tape.backward(loss)`` then walks the nodes in reverse and
accumulates chain-rule gradients into ``tensor.grad``.

Storage is always row-major (C-contiguous) float64 and operations materialize
their outputs; there are no lazy views crossing function boundaries. All math
is sequential numpy, so repeated evaluation of the same graph on the same
inputs is bit-identical.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import erf

from ..errors import DimensionError, NumericError, UsageError

Array = np.ndarray

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

LAYER_NORM_EPS = 1e-5


class Tensor:
    """A dense float64 array plus gradient bookkeeping.

    Tensors are immutable once built, with two sanctioned exceptions:
    optimizer steps rewrite ``data`` in place, and ``backward`` fills ``grad``.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor contains non-finite values")
        self.data: Array = arr
        self.requires_grad: bool = requires_grad
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> Array:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Arithmetic sugar; the functional forms below do the real work.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable[[Array], Sequence[Array | None]]):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_TAPE_STACK: list["Tape | None"] = []


class Tape:
    """Records operations for one forward pass; replayable backward exactly once."""

    def __init__(self):
        self._ops: list[_Node] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        if popped is not self:  # pragma: no cover - guarded by stack discipline
            raise UsageError("tape stack corrupted")

    def __len__(self) -> int:
        return len(self._ops)

    def backward(self, loss: Tensor) -> None:
        """Accumulate dloss/dt into ``t.grad`` for every recorded requires_grad tensor."""
        if self._spent:
            raise UsageError("tape already consumed by a previous backward pass; re-record the forward pass")
        if not self._ops:
            raise UsageError("backward on an empty tape")
        if loss.data.size != 1:
            raise UsageError(f"loss must be scalar, got shape {loss.data.shape}")
        if not any(node.out is loss for node in self._ops):
            raise UsageError("loss tensor was not produced by operations recorded on this tape")
        self._spent = True

        grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
        seen: dict[int, Tensor] = {id(loss): loss}
        for node in reversed(self._ops):
            gout = grads.pop(id(node.out), None)
            if gout is None:
                continue
            if node.out.requires_grad:
                node.out.grad = gout.copy() if node.out.grad is None else node.out.grad + gout
            for t, gin in zip(node.inputs, node.backward(gout)):
                if gin is None:
                    continue
                key = id(t)
                seen[key] = t
                if key in grads:
                    grads[key] = grads[key] + gin
                else:
                    grads[key] = gin
        for key, g in grads.items():
            t = seen[key]
            if t.requires_grad:
                t.grad = g.copy() if t.grad is None else t.grad + g


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


@contextmanager
def no_tape() -> Iterator[None]:
    """Temporarily disable recording (inference / finite-difference probes)."""
    _TAPE_STACK.append(None)  # type: ignore[arg-type]
    try:
        yield
    finally:
        _TAPE_STACK.pop()


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._ops.append(_Node(out, inputs, backward))
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient over the axes numpy broadcasting expanded."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# MAC accounting (matmul and convolution only; 1 MAC = 2 FLOPs by convention)

class MacCounter:
    def __init__(self):
        self.total = 0


_MAC_STACK: list[MacCounter] = []


@contextmanager
def count_macs() -> Iterator[MacCounter]:
    counter = MacCounter()
    _MAC_STACK.append(counter)
    try:
        yield counter
    finally:
        _MAC_STACK.pop()


def _add_macs(n: int) -> None:
    if _MAC_STACK:
        _MAC_STACK[-1].total += n


# ---------------------------------------------------------------------------
# Elementwise and linear algebra


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s)
    return _record(out, (a,), lambda g: (g * s,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data + c)
    return _record(out, (a,), lambda g: (g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading dimensions broadcast (``a``: ...xMxK, ``b``: ...xKxN)."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got shapes {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}")
    out_data = np.matmul(a.data, b.data)
    _add_macs(out_data.size // out_data.shape[-1] * a.data.shape[-1] * out_data.shape[-1])

    def backward(g: Array):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)
        return ga, gb

    return _record(Tensor(out_data), (a, b), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g: Array):
        inner = np.sum(g * y, axis=axis, keepdims=True)
        return ((g - inner) * y,)

    return _record(Tensor(y), (x,), backward)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(np.sum(x.data, axis=axis, keepdims=keepdims))

    def backward(g: Array):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _record(out, (x,), backward)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(np.mean(x.data, axis=axis, keepdims=keepdims))
    if axis is None:
        count = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = 1
        for ax in axes:
            count *= x.data.shape[ax]

    def backward(g: Array):
        if axis is None:
            return (np.broadcast_to(g / count, x.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.data.shape).copy(),)

    return _record(out, (x,), backward)


def average_pool_spatial(x: Tensor) -> Tensor:
    """Mean over the two leading spatial axes of an HxWxC map, keeping 1x1xC."""
    if x.data.ndim != 3:
        raise DimensionError(f"average_pool_spatial expects HxWxC, got {x.data.shape}")
    if x.data.shape[0] < 1 or x.data.shape[1] < 1:
        raise DimensionError(f"empty spatial extent in shape {x.data.shape}")
    return reduce_mean(x, axis=(0, 1), keepdims=True)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then apply affine."""
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise DimensionError(f"layer_norm affine shapes {gamma.data.shape}/{beta.data.shape} do not match channels {c}")
    mu = np.mean(x.data, axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data)
    lead_axes = tuple(range(x.data.ndim - 1))

    def backward(g: Array):
        dgamma = np.sum(g * xhat, axis=lead_axes) if lead_axes else (g * xhat)
        dbeta = np.sum(g, axis=lead_axes) if lead_axes else g
        dxhat = g * gamma.data
        m1 = np.mean(dxhat, axis=-1, keepdims=True)
        m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return _record(out, (x, gamma, beta), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = Tensor(x.data * cdf)

    def backward(g: Array):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf),)

    return _record(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    y = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(x.data))), np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))

    def backward(g: Array):
        return (g * y * (1.0 - y),)

    return _record(Tensor(y), (x,), backward)


# ---------------------------------------------------------------------------
# Data movement (all materialize; every one is an exact bijection or selection)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = Tensor(np.ascontiguousarray(x.data.reshape(tuple(shape))))
    return _record(out, (x,), lambda g: (g.reshape(x.data.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    return _record(out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inverse)),))


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g: Array):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return _record(out, tuple(parts), backward)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = Tensor(np.ascontiguousarray(x.data[index]))

    def backward(g: Array):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return _record(out, (x,), backward)


def take_channels(x: Tensor, perm: Sequence[int]) -> Tensor:
    """Permute the last axis by ``perm`` (must be a permutation)."""
    perm = np.asarray(perm, dtype=np.intp)
    inverse = np.argsort(perm)
    out = Tensor(np.ascontiguousarray(x.data[..., perm]))
    return _record(out, (x,), lambda g: (np.ascontiguousarray(g[..., inverse]),))


def roll2d(x: Tensor, shift_h: int, shift_w: int) -> Tensor:
    """Cyclic translation over the two leading axes."""
    out = Tensor(np.roll(x.data, (shift_h, shift_w), axis=(0, 1)))
    return _record(out, (x,), lambda g: (np.roll(g, (-shift_h, -shift_w), axis=(0, 1)),))


def _reflect_indices(n: int, total: int) -> Array:
    """Indices of length ``total`` reflecting off the edges of [0, n)."""
    idx = np.arange(total)
    if n == 1:
        return np.zeros(total, dtype=np.intp)
    period = 2 * (n - 1)
    idx = idx % period
    return np.where(idx < n, idx, period - idx).astype(np.intp)


def pad_reflect2d(x: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """Reflect-pad the bottom/right of an HxWxC map by (pad_h, pad_w)."""
    h, w = x.data.shape[0], x.data.shape[1]
    iy = _reflect_indices(h, h + pad_h)
    ix = _reflect_indices(w, w + pad_w)
    out = Tensor(np.ascontiguousarray(x.data[iy][:, ix]))

    def backward(g: Array):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (iy[:, None], ix[None, :]), g)
        return (gx,)

    return _record(out, (x,), backward)


def crop2d(x: Tensor, height: int, width: int) -> Tensor:
    out = Tensor(np.ascontiguousarray(x.data[:height, :width]))

    def backward(g: Array):
        gx = np.zeros_like(x.data)
        gx[:height, :width] = g
        return (gx,)

    return _record(out, (x,), backward)


def position_bias(table: Tensor, index: Array) -> Tensor:
    """Expand a per-head bias table (heads x S) into (heads x T x T) via ``index``."""
    heads = table.data.shape[0]
    out = Tensor(np.ascontiguousarray(table.data[:, index]))
    flat = index.ravel()

    def backward(g: Array):
        gt = np.zeros_like(table.data)
        np.add.at(gt, (np.repeat(np.arange(heads), flat.size), np.tile(flat, heads)), g.reshape(heads, -1).ravel())
        return (gt,)

    return _record(out, (table,), backward)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padding 2-D convolution of an HxWxCin map; weight is KhxKwxCinxCout.

    Odd kernel extents only; stride 1; zero padding.
    """
    if x.data.ndim != 3 or weight.data.ndim != 4:
        raise DimensionError(f"conv2d expects HxWxC and KhxKwxCinxCout, got {x.data.shape}, {weight.data.shape}")
    kh, kw, cin, cout = weight.data.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    if x.data.shape[2] != cin:
        raise DimensionError(f"conv2d channels disagree: input {x.data.shape} vs weight {weight.data.shape}")
    h, w = x.data.shape[0], x.data.shape[1]
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((h + 2 * ph, w + 2 * pw, cin))
    xp[ph:ph + h, pw:pw + w] = x.data

    out_data = np.zeros((h, w, cout))
    flat_out = out_data.reshape(h * w, cout)
    for dy in range(kh):
        for dx in range(kw):
            window = xp[dy:dy + h, dx:dx + w].reshape(h * w, cin)
            flat_out += window @ weight.data[dy, dx]
    _add_macs(h * w * kh * kw * cin * cout)
    if bias is not None:
        out_data += bias.data

    def backward(g: Array):
        gflat = g.reshape(h * w, cout)
        gw = np.zeros_like(weight.data)
        gxp = np.zeros_like(xp)
        for dy in range(kh):
            for dx in range(kw):
                window = xp[dy:dy + h, dx:dx + w].reshape(h * w, cin)
                gw[dy, dx] = window.T @ gflat
                gxp[dy:dy + h, dx:dx + w] += (gflat @ weight.data[dy, dx].T).reshape(h, w, cin)
        gx = gxp[ph:ph + h, pw:pw + w]
        if bias is None:
            return np.ascontiguousarray(gx), gw
        return np.ascontiguousarray(gx), gw, g.sum(axis=(0, 1))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record(Tensor(out_data), inputs, backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"mse shapes disagree: {a.data.shape} vs {b.data.shape}")
    diff = sub(a, b)
    return reduce_mean(mul(diff, diff))


def backward(tape: Tape, loss: Tensor) -> None:
    """Functional alias for ``tape.backward(loss)``."""
    tape.backward(loss)


def zero_grads(params) -> None:
    """Clear ``grad`` on an iterable or mapping of tensors."""
    values = params.values() if hasattr(params, "values") else params
    for p in values:
        p.grad = None
