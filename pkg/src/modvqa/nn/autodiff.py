"""Dense-tensor reverse-mode autodiff on numpy arrays.

Graphs are built eagerly: each op returns a Tensor holding its value and
a closure that routes the output gradient into the inputs.  backward()
topologically orders the graph and runs the closures in reverse.  Only
branches that lead to a requires_grad leaf are tracked, so constant
inputs (decoded video, subbands) cost nothing extra.

Training runs in float32; the same graph code runs in float64 for the
finite-difference checks.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import DataError

__all__ = ["Tensor", "concat", "conv2d", "conv3d", "maxpool2d", "softplus"]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to the original shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A value in the graph; set requires_grad=True on trainable leaves."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_needs")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._needs = requires_grad

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"],
                 backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = cls(data)
        needy = tuple(p for p in parents if p._needs)
        if needy:
            out._parents = needy
            out._backward = backward
            out._needs = True
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate gradients of this scalar into all requires_grad leaves."""
        if self.data.size != 1:
            raise DataError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited or not node._needs:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if not node.requires_grad:
                node.grad = None  # free intermediate grads

    # ---- arithmetic -------------------------------------------------

    @staticmethod
    def _lift(x, like: "Tensor") -> "Tensor":
        if isinstance(x, Tensor):
            return x
        return Tensor(np.asarray(x, dtype=like.data.dtype))

    def __add__(self, other):
        other = Tensor._lift(other, self)
        a, b = self, other

        def backward(g):
            if a._needs:
                a._accum(_unbroadcast(g, a.data.shape))
            if b._needs:
                b._accum(_unbroadcast(g, b.data.shape))

        return Tensor._from_op(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def backward(g):
            a._accum(-g)

        return Tensor._from_op(-a.data, (a,), backward)

    def __sub__(self, other):
        other = Tensor._lift(other, self)
        a, b = self, other

        def backward(g):
            if a._needs:
                a._accum(_unbroadcast(g, a.data.shape))
            if b._needs:
                b._accum(_unbroadcast(-g, b.data.shape))

        return Tensor._from_op(a.data - b.data, (a, b), backward)

    def __rsub__(self, other):
        return Tensor._lift(other, self) - self

    def __mul__(self, other):
        other = Tensor._lift(other, self)
        a, b = self, other

        def backward(g):
            if a._needs:
                a._accum(_unbroadcast(g * b.data, a.data.shape))
            if b._needs:
                b._accum(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._from_op(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other, self)
        a, b = self, other

        def backward(g):
            if a._needs:
                a._accum(_unbroadcast(g / b.data, a.data.shape))
            if b._needs:
                b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return Tensor._from_op(a.data / b.data, (a, b), backward)

    def __rtruediv__(self, other):
        return Tensor._lift(other, self) / self

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise DataError("only scalar exponents are supported")
        a = self

        def backward(g):
            a._accum(g * p * a.data ** (p - 1))

        return Tensor._from_op(a.data**p, (a,), backward)

    def __matmul__(self, other):
        a, b = self, other

        def backward(g):
            if a._needs:
                a._accum(g @ b.data.T)
            if b._needs:
                b._accum(a.data.T @ g)

        return Tensor._from_op(a.data @ b.data, (a, b), backward)

    # ---- elementwise nonlinearities ---------------------------------

    def relu(self):
        a = self
        mask = a.data > 0

        def backward(g):
            a._accum(g * mask)

        return Tensor._from_op(np.where(mask, a.data, 0.0), (a,), backward)

    def exp(self):
        a = self
        value = np.exp(a.data)

        def backward(g):
            a._accum(g * value)

        return Tensor._from_op(value, (a,), backward)

    def log(self):
        a = self

        def backward(g):
            a._accum(g / a.data)

        return Tensor._from_op(np.log(a.data), (a,), backward)

    def sqrt(self):
        a = self
        value = np.sqrt(a.data)

        def backward(g):
            a._accum(g * 0.5 / value)

        return Tensor._from_op(value, (a,), backward)

    # ---- reductions and shape ---------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        axes = _norm_axes(axis, a.data.ndim)

        def backward(g):
            a._accum(np.broadcast_to(_restore_dims(g, axes, keepdims), a.data.shape))

        return Tensor._from_op(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        a = self
        axes = _norm_axes(axis, a.data.ndim)
        count = int(np.prod([a.data.shape[i] for i in axes])) if axes else a.data.size

        def backward(g):
            g = _restore_dims(g, axes, keepdims) / count
            a._accum(np.broadcast_to(g, a.data.shape))

        return Tensor._from_op(a.data.mean(axis=axes, keepdims=keepdims), (a,), backward)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self

        def backward(g):
            a._accum(g.reshape(a.data.shape))

        return Tensor._from_op(a.data.reshape(shape), (a,), backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        a = self
        inv = np.argsort(axes)

        def backward(g):
            a._accum(g.transpose(inv))

        return Tensor._from_op(a.data.transpose(axes), (a,), backward)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _norm_axes(axis, ndim: int) -> tuple[int, ...] | None:
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _restore_dims(g: np.ndarray, axes, keepdims: bool) -> np.ndarray:
    """Re-insert reduced axes so g broadcasts back over the input shape."""
    g = np.asarray(g)
    if keepdims or axes is None:
        return g
    for ax in sorted(axes):
        g = np.expand_dims(g, ax)
    return g


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), numerically stable."""
    value = np.logaddexp(0.0, x.data)
    sig = _sigmoid(x.data)

    def backward(g):
        x._accum(g * sig)

    return Tensor._from_op(value, (x,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(ts, np.split(g, splits, axis=axis)):
            if t._needs:
                t._accum(piece)

    return Tensor._from_op(np.concatenate([t.data for t in ts], axis=axis), ts, backward)


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: tuple[int, int] = (1, 1),
    padding: tuple[int, int] = (1, 1),
) -> Tensor:
    """2-D convolution (cross-correlation), NCHW x OCkk -> NOHW."""
    n, c, h, wdt = x.data.shape
    o, c2, kh, kw = w.data.shape
    if c2 != c:
        raise DataError(f"conv2d channel mismatch: input {c}, kernel {c2}")
    sy, sx = stride
    ph, pw = padding
    hout = (h + 2 * ph - kh) // sy + 1
    wout = (wdt + 2 * pw - kw) // sx + 1
    if hout < 1 or wout < 1:
        raise DataError("conv2d output would be empty")
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    acc = np.zeros((n * hout * wout, o), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + sy * hout : sy, j : j + sx * wout : sx]
            pf = patch.transpose(0, 2, 3, 1).reshape(-1, c)
            acc += pf @ w.data[:, :, i, j].T
    value = acc.reshape(n, hout, wout, o).transpose(0, 3, 1, 2)
    if b is not None:
        value = value + b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gf = g.transpose(0, 2, 3, 1).reshape(-1, o)
        if b is not None and b._needs:
            b._accum(g.sum(axis=(0, 2, 3)))
        if x._needs:
            dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                if w._needs:
                    patch = xp[:, :, i : i + sy * hout : sy, j : j + sx * wout : sx]
                    pf = patch.transpose(0, 2, 3, 1).reshape(-1, c)
                    if w.grad is None:
                        w.grad = np.zeros_like(w.data)
                    w.grad[:, :, i, j] += gf.T @ pf
                if x._needs:
                    dpf = gf @ w.data[:, :, i, j]
                    dpatch = dpf.reshape(n, hout, wout, c).transpose(0, 3, 1, 2)
                    dxp[:, :, i : i + sy * hout : sy, j : j + sx * wout : sx] += dpatch
        if x._needs:
            x._accum(dxp[:, :, ph : ph + h, pw : pw + wdt])

    return Tensor._from_op(np.ascontiguousarray(value), parents, backward)


def conv3d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: tuple[int, int, int] = (1, 1, 1),
    padding: tuple[int, int, int] = (1, 1, 1),
) -> Tensor:
    """3-D convolution, NCTHW x OCttt -> NOTHW."""
    n, c, t, h, wdt = x.data.shape
    o, c2, kt, kh, kw = w.data.shape
    if c2 != c:
        raise DataError(f"conv3d channel mismatch: input {c}, kernel {c2}")
    st, sy, sx = stride
    pt, ph, pw = padding
    tout = (t + 2 * pt - kt) // st + 1
    hout = (h + 2 * ph - kh) // sy + 1
    wout = (wdt + 2 * pw - kw) // sx + 1
    if min(tout, hout, wout) < 1:
        raise DataError("conv3d output would be empty")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    acc = np.zeros((n * tout * hout * wout, o), dtype=x.data.dtype)
    for q in range(kt):
        for i in range(kh):
            for j in range(kw):
                patch = xp[
                    :, :,
                    q : q + st * tout : st,
                    i : i + sy * hout : sy,
                    j : j + sx * wout : sx,
                ]
                pf = patch.transpose(0, 2, 3, 4, 1).reshape(-1, c)
                acc += pf @ w.data[:, :, q, i, j].T
    value = acc.reshape(n, tout, hout, wout, o).transpose(0, 4, 1, 2, 3)
    if b is not None:
        value = value + b.data[None, :, None, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gf = g.transpose(0, 2, 3, 4, 1).reshape(-1, o)
        if b is not None and b._needs:
            b._accum(g.sum(axis=(0, 2, 3, 4)))
        if x._needs:
            dxp = np.zeros_like(xp)
        for q in range(kt):
            for i in range(kh):
                for j in range(kw):
                    if w._needs:
                        patch = xp[
                            :, :,
                            q : q + st * tout : st,
                            i : i + sy * hout : sy,
                            j : j + sx * wout : sx,
                        ]
                        pf = patch.transpose(0, 2, 3, 4, 1).reshape(-1, c)
                        if w.grad is None:
                            w.grad = np.zeros_like(w.data)
                        w.grad[:, :, q, i, j] += gf.T @ pf
                    if x._needs:
                        dpf = gf @ w.data[:, :, q, i, j]
                        dpatch = dpf.reshape(n, tout, hout, wout, c).transpose(0, 4, 1, 2, 3)
                        dxp[
                            :, :,
                            q : q + st * tout : st,
                            i : i + sy * hout : sy,
                            j : j + sx * wout : sx,
                        ] += dpatch
        if x._needs:
            x._accum(dxp[:, :, pt : pt + t, ph : ph + h, pw : pw + wdt])

    return Tensor._from_op(np.ascontiguousarray(value), parents, backward)


def maxpool2d(x: Tensor, kernel: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    """Max pooling, NCHW; used by imported classification backbones."""
    n, c, h, w = x.data.shape
    hout = (h + 2 * padding - kernel) // stride + 1
    wout = (w + 2 * padding - kernel) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                constant_values=-np.inf)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :hout, :wout]
    flat = win.reshape(n, c, hout, wout, kernel * kernel)
    arg = flat.argmax(axis=-1)
    value = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        dxp = np.zeros_like(xp)
        ky, kx = np.divmod(arg, kernel)
        oy = np.arange(hout)[None, None, :, None] * stride + ky
        ox = np.arange(wout)[None, None, None, :] * stride + kx
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        np.add.at(dxp, (ni, ci, oy, ox), g)
        x._accum(dxp[:, :, padding : padding + h, padding : padding + w])

    return Tensor._from_op(np.ascontiguousarray(value), (x,), backward)
