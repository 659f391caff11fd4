"""Dense N-d tensor with reverse-mode automatic differentiation.

The graph is recorded eagerly: every primitive that touches a tensor with
``requires_grad`` produces a node holding a backward closure and references
to its parents. ``Tensor.backward()`` topologically sorts the graph and
accumulates gradients additively over fan-out, so calling it twice without
``zero_grad`` doubles every leaf gradient.

All primitives are implemented on top of numpy; double precision is the
default dtype and is what the finite-difference checks assume.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import ShapeError, UsageError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A numpy array plus optional gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data, parents, backward):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- autodiff engine ------------------------------------------------------

    def backward(self, grad=None):
        """Run reverse-mode accumulation from this tensor.

        Without an explicit seed gradient the tensor must be scalar. Leaf
        gradients accumulate across repeated calls.
        """
        if self._backward is None and not self._parents:
            raise UsageError("backward() called on a tensor with no recorded graph")
        if grad is None:
            if self.size != 1:
                raise UsageError(
                    f"backward() needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf: accumulate into .grad
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # -- arithmetic primitives ------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        out_data = self.data + other.data
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._from_op(out_data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor._from_op(-self.data, (a,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-_as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return _as_tensor(other, self.dtype) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other, self.dtype)
        a, b = self, other

        def backward(g):
            return (_unbroadcast(g * b.data, a.shape),
                    _unbroadcast(g * a.data, b.shape))

        return Tensor._from_op(self.data * other.data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other, self.dtype)
        a, b = self, other

        def backward(g):
            return (_unbroadcast(g / b.data, a.shape),
                    _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._from_op(self.data / other.data, (a, b), backward)

    def __rtruediv__(self, other):
        return _as_tensor(other, self.dtype) / self

    def __pow__(self, exponent: float):
        a = self
        e = float(exponent)

        def backward(g):
            return (g * e * a.data ** (e - 1.0),)

        return Tensor._from_op(self.data ** e, (a,), backward)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        a = self
        out_data = self.data[idx]

        def backward(g):
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
            return (ga,)

        return Tensor._from_op(out_data, (a,), backward)

    # -- shape primitives -----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = self.shape
        return Tensor._from_op(self.data.reshape(shape), (a,),
                               lambda g: (g.reshape(old),))

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inv = np.argsort(axes)
        return Tensor._from_op(self.data.transpose(axes), (a,),
                               lambda g: (g.transpose(inv),))

    def transpose(self, ax0: int, ax1: int):
        axes = list(range(self.ndim))
        axes[ax0], axes[ax1] = axes[ax1], axes[ax0]
        return self.permute(*axes)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, a.shape).copy(),)
            g2 = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g2, a.shape).copy(),)

        return Tensor._from_op(out_data, (a,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.size
        elif isinstance(axis, tuple):
            n = int(np.prod([self.shape[i] for i in axis]))
        else:
            n = self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- elementwise nonlinearities --------------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(self.data)
        return Tensor._from_op(out_data, (a,), lambda g: (g * out_data,))

    def log(self):
        a = self
        return Tensor._from_op(np.log(self.data), (a,), lambda g: (g / a.data,))

    def sqrt(self):
        a = self
        out_data = np.sqrt(self.data)
        return Tensor._from_op(out_data, (a,), lambda g: (g * 0.5 / out_data,))

    def relu(self):
        a = self
        mask = self.data > 0
        return Tensor._from_op(self.data * mask, (a,), lambda g: (g * mask,))

    def sigmoid(self):
        a = self
        out_data = 1.0 / (1.0 + np.exp(-self.data))
        return Tensor._from_op(out_data, (a,),
                               lambda g: (g * out_data * (1.0 - out_data),))

    def gelu(self):
        # exact erf form; derivative Phi(x) + x * phi(x)
        a = self
        x = self.data
        cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

        def backward(g):
            pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
            return (g * (cdf + x * pdf),)

        return Tensor._from_op(x * cdf, (a,), backward)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


# -- free-function primitives ---------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading dimensions broadcast as in numpy."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2+ dims, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return Tensor._from_op(out_data, (a, b), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along ``axis``."""
    _check_axis(x, axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return Tensor._from_op(y, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_axis(x, axis)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    sm = np.exp(out_data)

    def backward(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out_data, (x,), backward)


def _check_axis(x: Tensor, axis: int):
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} invalid for shape {x.shape}")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(out_data, tuple(tensors), backward)


def variance(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Biased variance, recorded through mean/multiply primitives."""
    mu = x.mean(axis=axis, keepdims=True)
    d = x - mu
    return (d * d).mean(axis=axis, keepdims=keepdims)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """2-d cross-correlation on (B, C, H, W) input.

    ``w`` is (C_out, C_in/groups, kh, kw). Implemented as im2col + batched
    matmul; the backward pass scatters with a fixed loop order so results
    are deterministic.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d x and w, got {x.shape}, {w.shape}")
    B, C_in, H, W = x.shape
    C_out, C_in_g, kh, kw = w.shape
    if C_in != C_in_g * groups or C_out % groups != 0:
        raise ShapeError(
            f"conv2d channel mismatch: x has {C_in} channels, "
            f"w is {w.shape} with groups={groups}")
    s, p = stride, padding
    Ho = (H + 2 * p - kh) // s + 1
    Wo = (W + 2 * p - kw) // s + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols = np.empty((B, C_in, kh, kw, Ho, Wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + s * Ho:s, j:j + s * Wo:s]

    C_out_g = C_out // groups
    k = C_in_g * kh * kw
    cols_g = cols.reshape(B, groups, k, Ho * Wo)
    w_g = w.data.reshape(groups, C_out_g, k)
    out = np.matmul(w_g[None], cols_g)  # (B, groups, C_out_g, Ho*Wo)
    out = out.reshape(B, C_out, Ho, Wo)
    if b is not None:
        out = out + b.data.reshape(1, C_out, 1, 1)

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g4 = g.reshape(B, groups, C_out_g, Ho * Wo)
        gw = np.einsum("bgok,bgik->goi", g4, cols_g).reshape(w.shape)
        gcols = np.matmul(np.swapaxes(w_g, -1, -2)[None], g4)
        gcols = gcols.reshape(B, C_in, kh, kw, Ho, Wo)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + s * Ho:s, j:j + s * Wo:s] += gcols[:, :, i, j]
        gx = gxp[:, :, p:p + H, p:p + W] if p else gxp
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return Tensor._from_op(out, parents, backward)


def bilinear_resize(x: Tensor, target) -> Tensor:
    """Bilinear resize of a (B, C, H, W) tensor with align_corners=false.

    Source coordinate for destination index d is (d + 0.5) * scale - 0.5,
    clamped to the border.
    """
    if x.ndim != 4:
        raise ShapeError(f"bilinear_resize expects (B,C,H,W), got {x.shape}")
    Ht, Wt = int(target[0]), int(target[1])
    if Ht < 1 or Wt < 1:
        raise ShapeError(f"invalid target size {target}")
    B, C, H, W = x.shape
    if (Ht, Wt) == (H, W):
        a = x
        return Tensor._from_op(x.data.copy(), (a,), lambda g: (g,))

    y0, y1, wy = _resize_taps(H, Ht)
    x0, x1, wx = _resize_taps(W, Wt)
    wy = wy[:, None]
    wx = wx[None, :]
    w00 = (1 - wy) * (1 - wx)
    w01 = (1 - wy) * wx
    w10 = wy * (1 - wx)
    w11 = wy * wx

    d = x.data
    out = (d[:, :, y0[:, None], x0[None, :]] * w00
           + d[:, :, y0[:, None], x1[None, :]] * w01
           + d[:, :, y1[:, None], x0[None, :]] * w10
           + d[:, :, y1[:, None], x1[None, :]] * w11)

    def backward(g):
        gx = np.zeros_like(d)
        yy0 = np.broadcast_to(y0[:, None], (Ht, Wt))
        yy1 = np.broadcast_to(y1[:, None], (Ht, Wt))
        xx0 = np.broadcast_to(x0[None, :], (Ht, Wt))
        xx1 = np.broadcast_to(x1[None, :], (Ht, Wt))
        for (yy, xx, ww) in ((yy0, xx0, w00), (yy0, xx1, w01),
                             (yy1, xx0, w10), (yy1, xx1, w11)):
            np.add.at(gx, (slice(None), slice(None), yy, xx), g * ww)
        return (gx,)

    return Tensor._from_op(out, (x,), backward)


def _resize_taps(src: int, dst: int):
    """Integer taps and fractional weights for one resize axis."""
    coord = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    coord = np.clip(coord, 0.0, src - 1.0)
    lo = np.floor(coord).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    return lo, hi, coord - lo


def avg_pool_resize(x: Tensor, target) -> Tensor:
    """Average-pool downsample to an exact divisor size (ablation path)."""
    B, C, H, W = x.shape
    Ht, Wt = int(target[0]), int(target[1])
    if H % Ht or W % Wt:
        raise ShapeError(f"avg pool target {target} must divide {(H, W)}")
    fh, fw = H // Ht, W // Wt
    return x.reshape(B, C, Ht, fh, Wt, fw).mean(axis=(3, 5))
