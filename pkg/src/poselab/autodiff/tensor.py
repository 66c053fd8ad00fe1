"""Reverse-mode automatic differentiation on dense numpy arrays.

Eager execution: every operation computes its result immediately and
records a backward closure on the output node. ``Tensor.backward()``
walks the recorded graph once in reverse topological order and
accumulates gradients additively, so fan-out nodes sum the gradients
from all consumers.

Float64 is the default dtype (gradient checks need it); float32 is
supported throughout for speed and is preserved by all operations.
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense array plus the bookkeeping needed for reverse mode.

    ``data`` is always a numpy array. ``grad`` has the same shape once
    ``backward`` has touched the node. Nodes created while gradients are
    enabled keep references to their parents; data of non-leaf nodes must
    not be mutated after the forward pass.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw array data, not another Tensor")
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float64, np.float32):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents, backward):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._parents = ()
        out._backward = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
        return out

    # -- basic properties -----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def check_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in {what}")
        return self

    def zero_grad(self):
        self.grad = None

    # -- autodiff engine ------------------------------------------------------

    def backward(self, grad=None):
        """Accumulate gradients of this node into every reachable leaf.

        ``grad`` defaults to ones (the usual scalar-loss seed). The graph
        is walked iteratively so deep training graphs cannot overflow the
        Python recursion limit.
        """
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ValueError("seed gradient shape mismatch")

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accum(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = grad
        else:
            self.grad = self.grad + grad

    # -- arithmetic -----------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other
        data = a.data + b.data

        def backward(grad):
            if a.requires_grad:
                a._accum(_unbroadcast(grad, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(grad, b.data.shape))

        return Tensor._make(data, (a, b), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        a, b = self, other
        data = a.data - b.data

        def backward(grad):
            if a.requires_grad:
                a._accum(_unbroadcast(grad, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-grad, b.data.shape))

        return Tensor._make(data, (a, b), backward)

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __neg__(self):
        a = self
        data = -a.data

        def backward(grad):
            a._accum(-grad)

        return Tensor._make(data, (a,), backward)

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        data = a.data * b.data

        def backward(grad):
            if a.requires_grad:
                a._accum(_unbroadcast(grad * b.data, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(grad * a.data, b.data.shape))

        return Tensor._make(data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self, other
        data = a.data / b.data

        def backward(grad):
            if a.requires_grad:
                a._accum(_unbroadcast(grad / b.data, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-grad * a.data / (b.data * b.data), b.data.shape))

        return Tensor._make(data, (a, b), backward)

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a = self
        data = a.data ** p

        def backward(grad):
            a._accum(grad * p * a.data ** (p - 1))

        return Tensor._make(data, (a,), backward)

    def __matmul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        data = a.data @ b.data

        def backward(grad):
            if a.requires_grad:
                if b.data.ndim == 1:
                    ga = np.multiply.outer(grad, b.data) if a.data.ndim > 1 else grad * b.data
                else:
                    g = grad[..., None, :] if a.data.ndim == 1 else grad
                    ga = g @ np.swapaxes(b.data, -1, -2)
                    if a.data.ndim == 1:
                        ga = ga[..., 0, :]
                a._accum(_unbroadcast(np.ascontiguousarray(ga), a.data.shape))
            if b.requires_grad:
                if a.data.ndim == 1:
                    gb = np.multiply.outer(a.data, grad) if b.data.ndim > 1 else a.data * grad
                else:
                    g = grad[..., None] if b.data.ndim == 1 else grad
                    gb = np.swapaxes(a.data, -1, -2) @ g
                    if b.data.ndim == 1:
                        gb = gb[..., 0]
                b._accum(_unbroadcast(np.ascontiguousarray(gb), b.data.shape))

        return Tensor._make(data, (a, b), backward)

    # -- shape ops ------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.data.shape
        data = a.data.reshape(shape)

        def backward(grad):
            a._accum(grad.reshape(old))

        return Tensor._make(data, (a,), backward)

    def transpose(self, axes):
        a = self
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        data = np.transpose(a.data, axes)

        def backward(grad):
            a._accum(np.ascontiguousarray(np.transpose(grad, inv)))

        return Tensor._make(data, (a,), backward)

    def swapaxes(self, ax1, ax2):
        axes = list(range(self.data.ndim))
        axes[ax1], axes[ax2] = axes[ax2], axes[ax1]
        return self.transpose(axes)

    def __getitem__(self, key):
        a = self
        data = a.data[key]

        def backward(grad):
            full = np.zeros_like(a.data)
            np.add.at(full, key, grad)
            a._accum(full)

        return Tensor._make(data, (a,), backward)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(grad):
            g = grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.data.shape).copy())

        return Tensor._make(data, (a,), backward)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # -- elementwise nonlinearities --------------------------------------------

    def exp(self):
        a = self
        data = np.exp(a.data)

        def backward(grad):
            a._accum(grad * data)

        return Tensor._make(data, (a,), backward)

    def log(self):
        a = self
        data = np.log(a.data)

        def backward(grad):
            a._accum(grad / a.data)

        return Tensor._make(data, (a,), backward)

    def sqrt(self):
        a = self
        data = np.sqrt(a.data)

        def backward(grad):
            a._accum(grad * (0.5 / data))

        return Tensor._make(data, (a,), backward)

    def abs(self):
        a = self
        data = np.abs(a.data)

        def backward(grad):
            a._accum(grad * np.sign(a.data))

        return Tensor._make(data, (a,), backward)


# -- free functions ------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)
    mask = x.data > 0

    def backward(grad):
        x._accum(grad * mask)

    return Tensor._make(data, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    data = _stable_sigmoid(x.data)

    def backward(grad):
        x._accum(grad * data * (1.0 - data))

    return Tensor._make(data, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; the max shift is exact, not approximate."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    data = ex / ex.sum(axis=axis, keepdims=True)

    def backward(grad):
        dot = (grad * data).sum(axis=axis, keepdims=True)
        x._accum(data * (grad - dot))

    return Tensor._make(data, (x,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(grad):
        parts = np.split(grad, splits, axis=axis)
        for t, g in zip(tensors, parts):
            if t.requires_grad:
                t._accum(np.ascontiguousarray(g))

    return Tensor._make(data, tuple(tensors), backward)


def gather_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """Row lookup ``table[index]`` with scatter-add backward (embedding op)."""
    index = np.asarray(index)
    data = table.data[index]

    def backward(grad):
        full = np.zeros_like(table.data)
        np.add.at(full, index, grad)
        table._accum(full)

    return Tensor._make(data, (table,), backward)


def maximum(x: Tensor, value: float) -> Tensor:
    """Elementwise max with a constant; subgradient 0 on the flat side."""
    data = np.maximum(x.data, value)
    mask = x.data > value

    def backward(grad):
        x._accum(grad * mask)

    return Tensor._make(data, (x,), backward)


def where_const(cond: np.ndarray, x: Tensor, y: Tensor) -> Tensor:
    """Select by a constant boolean mask (the mask itself is not differentiated)."""
    cond = np.asarray(cond, bool)
    data = np.where(cond, x.data, y.data)

    def backward(grad):
        if x.requires_grad:
            x._accum(_unbroadcast(np.where(cond, grad, 0.0), x.data.shape))
        if y.requires_grad:
            y._accum(_unbroadcast(np.where(cond, 0.0, grad), y.data.shape))

    return Tensor._make(data, (x, y), backward)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    diff = pred - target
    return (diff * diff).mean()


def l2_norm(x: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``. Not differentiable at exactly zero."""
    return (x * x).sum(axis=axis).sqrt()


def mean_pool(x: Tensor, axis: int = 1) -> Tensor:
    return x.mean(axis=axis)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = (var + eps) ** -0.5
    return centered * inv * gamma + beta


def patchify(x: Tensor, patch: int) -> Tensor:
    """Split a feature map [B,C,H,W] into non-overlapping flattened patches.

    Returns [B, (H/p)*(W/p), C*p*p]; pure reshaping, so the gradient is
    exact by construction.
    """
    B, C, H, W = x.shape
    if H % patch or W % patch:
        raise ValueError(f"spatial dims {(H, W)} not divisible by patch {patch}")
    gh, gw = H // patch, W // patch
    t = x.reshape(B, C, gh, patch, gw, patch)
    t = t.transpose((0, 2, 4, 1, 3, 5))
    return t.reshape(B, gh * gw, C * patch * patch)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` with weight of shape [in, out]."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input dim {x.shape[-1]} != weight dim {weight.shape[0]}")
    out = x @ weight
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ValueError("linear: bias shape mismatch")
        out = out + bias
    return out


def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation of [B,C,H,W] with kernel [OC,C,KH,KW].

    Implemented as im2col + matmul; the backward pass scatters the column
    gradient back with the exact adjoint (col2im).
    """
    B, C, H, W = x.shape
    OC, C2, KH, KW = kernel.shape
    if C != C2:
        raise ValueError(f"conv2d: input channels {C} != kernel channels {C2}")
    OH = (H + 2 * padding - KH) // stride + 1
    OW = (W + 2 * padding - KW) // stride + 1
    if OH <= 0 or OW <= 0:
        raise ValueError("conv2d: kernel larger than padded input")

    xp = _pad_hw(x.data, padding)
    # Index grids for im2col: cols[b, c, kh, kw, oh, ow] = xp[b, c, oh*s+kh, ow*s+kw]
    i0 = stride * np.arange(OH)[:, None] + np.arange(KH)[None, :]   # [OH, KH]
    j0 = stride * np.arange(OW)[:, None] + np.arange(KW)[None, :]   # [OW, KW]
    cols = xp[:, :, i0[:, None, :, None], j0[None, :, None, :]]     # [B, C, OH, OW, KH, KW]
    cols_mat = cols.transpose(0, 2, 3, 1, 4, 5).reshape(B * OH * OW, C * KH * KW)
    w_mat = kernel.data.reshape(OC, C * KH * KW).T
    out = cols_mat @ w_mat                                          # [B*OH*OW, OC]
    data = out.reshape(B, OH, OW, OC).transpose(0, 3, 1, 2)
    data = np.ascontiguousarray(data)
    if bias is not None:
        data = data + bias.data[None, :, None, None]

    def backward(grad):
        g_mat = grad.transpose(0, 2, 3, 1).reshape(B * OH * OW, OC)
        if kernel.requires_grad:
            gw = (cols_mat.T @ g_mat).T.reshape(OC, C, KH, KW)
            kernel._accum(np.ascontiguousarray(gw))
        if bias is not None and bias.requires_grad:
            bias._accum(grad.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gcols = (g_mat @ w_mat.T).reshape(B, OH, OW, C, KH, KW).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros_like(xp)
            np.add.at(gxp, (slice(None), slice(None), i0[:, None, :, None], j0[None, :, None, :]),
                      gcols)
            if padding:
                gxp = gxp[:, :, padding:-padding, padding:-padding]
            x._accum(np.ascontiguousarray(gxp))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor._make(data, parents, backward)


def multi_head_self_attention(tokens: Tensor, wq: Tensor, wk: Tensor, wv: Tensor,
                              wo: Tensor, bq: Tensor, bk: Tensor, bv: Tensor,
                              bo: Tensor, heads: int) -> Tensor:
    """Scaled dot-product self-attention over [B,T,E] with learned projections.

    Injects no positional information: permuting the T axis of the input
    permutes the output rows identically.
    """
    B, T, E = tokens.shape
    if E % heads:
        raise ValueError(f"embed dim {E} not divisible by heads {heads}")
    hd = E // heads

    def split(t):
        return t.reshape(B, T, heads, hd).transpose((0, 2, 1, 3))  # [B,h,T,hd]

    q = split(linear(tokens, wq, bq))
    k = split(linear(tokens, wk, bk))
    v = split(linear(tokens, wv, bv))
    scores = (q @ k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(hd))
    attn = softmax(scores, axis=-1)
    ctx = attn @ v                                                  # [B,h,T,hd]
    merged = ctx.transpose((0, 2, 1, 3)).reshape(B, T, E)
    return linear(merged, wo, bo)
