"""Minimal dense-tensor reverse-mode autodiff engine.

Tensors wrap float64 numpy arrays. Every differentiable op records a
backward closure on the output; ``Tensor.backward()`` walks the tape in
reverse topological order. The networks built on top of this are tiny
(thousands of parameters), so clarity and double-precision
reproducibility win over raw speed.
"""

from __future__ import annotations

import numpy as np


class AutodiffError(Exception):
    pass


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape recording (inference paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """A float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        """Reverse-mode sweep from a scalar output.

        Accumulates ``.grad`` on every reachable tensor with
        ``requires_grad=True``; leaves off the path keep ``grad=None``
        (read as zero).
        """
        if self.data.size != 1:
            raise AutodiffError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), mul(self, -1.0))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, powc(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __rtruediv__(self, other):
        return mul(_as_tensor(other), powc(self, -1.0))

    def __pow__(self, p):
        return powc(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_grad(*tensors: Tensor) -> bool:
    return _GRAD_ENABLED and any(t.requires_grad for t in tensors)


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _make(out_data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(out_data)
    if _needs_grad(*parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# -- elementwise and reduction ops ------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def powc(a, p) -> Tensor:
    """Elementwise power with a constant exponent."""
    a = _as_tensor(a)
    p = float(p)
    out_data = a.data**p

    def backward(g):
        _accumulate(a, g * p * a.data ** (p - 1.0))

    return _make(out_data, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * out_data)

    return _make(out_data, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.log(a.data)

    def backward(g):
        _accumulate(a, g / a.data)

    return _make(out_data, (a,), backward)


def sin(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        _accumulate(a, g * np.cos(a.data))

    return _make(np.sin(a.data), (a,), backward)


def cos(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        _accumulate(a, -g * np.sin(a.data))

    return _make(np.cos(a.data), (a,), backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0.0

    def backward(g):
        _accumulate(a, g * mask)

    return _make(a.data * mask, (a,), backward)


def elu(a) -> Tensor:
    """ELU with alpha=1: x for x>0, exp(x)-1 otherwise."""
    a = _as_tensor(a)
    neg = np.exp(np.minimum(a.data, 0.0)) - 1.0
    out_data = np.where(a.data > 0.0, a.data, neg)

    def backward(g):
        _accumulate(a, g * np.where(a.data > 0.0, 1.0, neg + 1.0))

    return _make(out_data, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _make(out_data, (a, b), backward)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(out_data, (a,), backward)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, *shape) -> Tensor:
    a = _as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old_shape = a.data.shape
    out_data = a.data.reshape(shape)

    def backward(g):
        _accumulate(a, g.reshape(old_shape))

    return _make(out_data, (a,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _make(out_data, tuple(tensors), backward)


# -- 1D convolution ----------------------------------------------------------


def _pad_width(x: np.ndarray, padding, kernel: int):
    """Return zero-padded array and pad sizes for (N, C, W) input."""
    p = int(padding)
    if p < 0:
        raise AutodiffError(f"invalid padding {padding!r}")
    if p == 0:
        return x, 0, 0
    return np.pad(x, ((0, 0), (0, 0), (p, p))), p, p


def conv1d(x, weight, bias=None, stride: int = 1, padding=0) -> Tensor:
    """Cross-correlation over the last axis.

    x: (N, C_in, W); weight: (C_out, C_in, K); bias: (C_out,).
    ``padding`` is an integer (zero padding) or ``"circular"``, which
    wraps indices so the output width equals the input width (stride 1).
    Orientation is cross-correlation: out[w] = sum_t k[t] * x[w + t - pad].
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    if bias is not None:
        bias = _as_tensor(bias)
    if x.data.ndim != 3 or weight.data.ndim != 3:
        raise AutodiffError("conv1d expects (N, C_in, W) input and (C_out, C_in, K) weight")
    stride = int(stride)
    if stride < 1:
        raise AutodiffError(f"invalid stride {stride}")
    n, c_in, w_in = x.data.shape
    c_out, c_in_w, k = weight.data.shape
    if c_in_w != c_in:
        raise AutodiffError(f"channel mismatch: input has {c_in}, weight expects {c_in_w}")
    if padding == "circular":
        # index-take handles kernels wider than the signal uniformly
        pl = (k - 1) // 2
        pr = k - 1 - pl
        wrap_idx = (np.arange(w_in + k - 1) - pl) % w_in
        xp = x.data[:, :, wrap_idx]
    else:
        xp, pl, pr = _pad_width(x.data, padding, k)
    w_pad = xp.shape[2]
    if w_pad < k:
        raise AutodiffError(f"width {w_in} too small for kernel {k} with padding {padding!r}")
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)
    windows = windows[:, :, ::stride, :]  # (N, C_in, W_out, K)
    out_data = np.einsum("ncwk,ock->now", windows, weight.data, optimize=True)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None]
    w_out = out_data.shape[2]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if weight.requires_grad:
            gw = np.einsum("now,ncwk->ock", g, windows, optimize=True)
            _accumulate(weight, gw)
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2)))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for t in range(k):
                contrib = np.einsum("now,oc->ncw", g, weight.data[:, :, t], optimize=True)
                if stride == 1:
                    gxp[:, :, t : t + w_out] += contrib
                else:
                    # stride >= 2 gives distinct target indices
                    gxp[:, :, t + stride * np.arange(w_out)] += contrib
            if padding == "circular":
                gx = np.zeros((n, c_in, w_in))
                np.add.at(gx, (slice(None), slice(None), wrap_idx), gxp)
            elif pl or pr:
                gx = gxp[:, :, pl : pl + w_in]
            else:
                gx = gxp
            _accumulate(x, gx)

    return _make(out_data, parents, backward)


# -- helpers -----------------------------------------------------------------


def collect_grads(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradient for every named parameter; zeros for those off the path."""
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
