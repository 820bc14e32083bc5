"""Minimal reverse-mode autodiff over float64 numpy arrays.

Only what the learning modules need: elementwise arithmetic, matmul, conv2d
(stride 1-2, zero padding), activations, reductions, log-sum-exp/softmax,
channel slicing/stacking and nearest-neighbor resizing. No broadcasting
beyond scalar-tensor; shapes must match exactly or an operation raises with
both shapes in the message.
"""

import numpy as np

from . import kernels


def _as_array(value):
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, _parents=(), _backward_fn=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward_fn = _backward_fn

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.data.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.requires_grad:
                node._backward_fn(node.grad)

    def item(self):
        return float(self.data)

    # operator sugar used throughout the model code
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), mul(self, -1.0))

    def __truediv__(self, other):
        return div(self, other)


def _wrap(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _is_scalar(t):
    return t.data.ndim == 0 or t.data.size == 1


def _check_same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    if not (_is_scalar(a) or _is_scalar(b)):
        _check_same_shape("add", a, b)
    out = Tensor(a.data + b.data, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.sum().reshape(a.data.shape) if _is_scalar(a) and not _is_scalar(b) else g)
        if b.requires_grad:
            b._accumulate(g.sum().reshape(b.data.shape) if _is_scalar(b) and not _is_scalar(a) else g)

    out._backward_fn = backward
    return out


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    if not (_is_scalar(a) or _is_scalar(b)):
        _check_same_shape("mul", a, b)
    out = Tensor(a.data * b.data, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            ga = g * b.data
            a._accumulate(ga.sum().reshape(a.data.shape) if _is_scalar(a) and not _is_scalar(b) else ga)
        if b.requires_grad:
            gb = g * a.data
            b._accumulate(gb.sum().reshape(b.data.shape) if _is_scalar(b) and not _is_scalar(a) else gb)

    out._backward_fn = backward
    return out


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    if not (_is_scalar(a) or _is_scalar(b)):
        _check_same_shape("div", a, b)
    out = Tensor(a.data / b.data, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            ga = g / b.data
            a._accumulate(ga.sum().reshape(a.data.shape) if _is_scalar(a) and not _is_scalar(b) else ga)
        if b.requires_grad:
            gb = -g * a.data / (b.data * b.data)
            b._accumulate(gb.sum().reshape(b.data.shape) if _is_scalar(b) and not _is_scalar(a) else gb)

    out._backward_fn = backward
    return out


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data @ b.data, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    out._backward_fn = backward
    return out


def dot(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ValueError(f"dot: expects vectors, got {a.data.shape} vs {b.data.shape}")
    _check_same_shape("dot", a, b)
    out = Tensor(a.data @ b.data, _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    out._backward_fn = backward
    return out


def conv2d(x, w, bias=None, stride=1, pad=1):
    """x: (Cin, H, W); w: (Cout, Cin, kh, kw); bias: optional (Cout,)."""
    x, w = _wrap(x), _wrap(w)
    bias = None if bias is None else _wrap(bias)
    parents = (x, w) if bias is None else (x, w, bias)
    if x.data.ndim != 3 or w.data.ndim != 4 or x.data.shape[0] != w.data.shape[1]:
        raise ValueError(f"conv2d: incompatible shapes {x.data.shape} vs {w.data.shape}")
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")
    data = kernels.conv2d_forward(x.data, w.data, stride, pad)
    if bias is not None:
        if bias.data.shape != (w.data.shape[0],):
            raise ValueError(
                f"conv2d: bias shape {bias.data.shape} does not match out channels {w.data.shape[0]}"
            )
        data = data + bias.data[:, None, None]
    out = Tensor(data, _parents=parents)

    def backward(g):
        g = np.ascontiguousarray(g)
        if x.requires_grad:
            x._accumulate(kernels.conv2d_input_grad(g, w.data, x.data.shape, stride, pad))
        if w.requires_grad:
            w._accumulate(kernels.conv2d_weight_grad(g, x.data, w.data.shape, stride, pad))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(1, 2)))

    out._backward_fn = backward
    return out


def relu(x):
    x = _wrap(x)
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0.0), _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    out._backward_fn = backward
    return out


def leaky_relu(x, slope=0.01):
    x = _wrap(x)
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, slope * x.data), _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * np.where(mask, 1.0, slope))

    out._backward_fn = backward
    return out


def sigmoid(x):
    x = _wrap(x)
    y = 1.0 / (1.0 + np.exp(-np.clip(x.data, -500, 500)))
    out = Tensor(y, _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * y * (1.0 - y))

    out._backward_fn = backward
    return out


def log(x):
    x = _wrap(x)
    out = Tensor(np.log(x.data), _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g / x.data)

    out._backward_fn = backward
    return out


def exp(x):
    x = _wrap(x)
    y = np.exp(x.data)
    out = Tensor(y, _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * y)

    out._backward_fn = backward
    return out


def mean(x, axes=None):
    x = _wrap(x)
    axes = tuple(range(x.data.ndim)) if axes is None else tuple(axes)
    count = int(np.prod([x.data.shape[a] for a in axes])) if axes else 1
    out = Tensor(x.data.mean(axis=axes) if axes else x.data.copy(), _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(np.expand_dims(g, axes), x.data.shape) / count)

    out._backward_fn = backward
    return out


def tsum(x, axes=None):
    x = _wrap(x)
    axes = tuple(range(x.data.ndim)) if axes is None else tuple(axes)
    out = Tensor(x.data.sum(axis=axes) if axes else x.data.copy(), _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(np.expand_dims(g, axes), x.data.shape).copy())

    out._backward_fn = backward
    return out


def mean_pool_spatial(x):
    """Global average pool of (C, h, w) to (C,)."""
    x = _wrap(x)
    if x.data.ndim != 3:
        raise ValueError(f"mean_pool_spatial: expects (C, h, w), got {x.data.shape}")
    return mean(x, axes=(1, 2))


def logsumexp(x, axis):
    x = _wrap(x)
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    s = np.exp(shifted).sum(axis=axis, keepdims=True)
    value = (m + np.log(s)).squeeze(axis)
    out = Tensor(value, _parents=(x,))
    soft = np.exp(shifted) / s  # softmax along axis

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.expand_dims(g, axis) * soft)

    out._backward_fn = backward
    return out


def log_softmax(x, axis):
    x = _wrap(x)
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = Tensor(shifted - lse, _parents=(x,))
    soft = np.exp(shifted - lse)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g - soft * g.sum(axis=axis, keepdims=True))

    out._backward_fn = backward
    return out


def softplus(x):
    """log(1 + exp(x)), stable for large |x|."""
    x = _wrap(x)
    out = Tensor(np.logaddexp(0.0, x.data), _parents=(x,))
    sig = 1.0 / (1.0 + np.exp(-np.clip(x.data, -500, 500)))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * sig)

    out._backward_fn = backward
    return out


def sqrt(x):
    x = _wrap(x)
    y = np.sqrt(x.data)
    out = Tensor(y, _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * 0.5 / y)

    out._backward_fn = backward
    return out


def softmax(x, axis):
    x = _wrap(x)
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, _parents=(x,))

    def backward(g):
        if x.requires_grad:
            inner = (g * y).sum(axis=axis, keepdims=True)
            x._accumulate(y * (g - inner))

    out._backward_fn = backward
    return out


def reshape(x, shape):
    x = _wrap(x)
    out = Tensor(x.data.reshape(shape), _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.data.shape))

    out._backward_fn = backward
    return out


def narrow(x, axis, start, length):
    """Contiguous slice along one axis."""
    x = _wrap(x)
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(x.data[idx].copy(), _parents=(x,))

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[idx] = g
            x._accumulate(full)

    out._backward_fn = backward
    return out


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + size)
                t._accumulate(g[tuple(idx)])
            offset += size

    out._backward_fn = backward
    return out


def scale_channels(x, s):
    """Multiply channel c of (C, h, w) by s[c]; explicit per-channel broadcast."""
    x, s = _wrap(x), _wrap(s)
    if x.data.ndim != 3 or s.data.shape != (x.data.shape[0],):
        raise ValueError(
            f"scale_channels: feature {x.data.shape} needs gains of shape ({x.data.shape[0]},), got {s.data.shape}"
        )
    out = Tensor(x.data * s.data[:, None, None], _parents=(x, s))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * s.data[:, None, None])
        if s.requires_grad:
            s._accumulate((g * x.data).sum(axis=(1, 2)))

    out._backward_fn = backward
    return out


def upsample_nearest(x, factor):
    """(C, h, w) -> (C, h*factor, w*factor) by duplication."""
    x = _wrap(x)
    if factor == 1:
        return x
    out = Tensor(np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2), _parents=(x,))

    def backward(g):
        if x.requires_grad:
            c, h, w = x.data.shape
            x._accumulate(
                g.reshape(c, h, factor, w, factor).sum(axis=(2, 4))
            )

    out._backward_fn = backward
    return out


def resize_nearest(x, out_h, out_w):
    """Nearest-neighbor resize of (C, h, w); exact inverse ratios preferred."""
    x = _wrap(x)
    c, h, w = x.data.shape
    if (out_h, out_w) == (h, w):
        return x
    rows = np.minimum((np.arange(out_h) * h) // out_h, h - 1)
    cols = np.minimum((np.arange(out_w) * w) // out_w, w - 1)
    out = Tensor(x.data[:, rows[:, None], cols[None, :]], _parents=(x,))

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            np.add.at(full, (slice(None), rows[:, None], cols[None, :]), g)
            x._accumulate(full)

    out._backward_fn = backward
    return out


def stack_vectors(vectors):
    """Stack 1-D tensors into a matrix (rows in argument order)."""
    return concat([reshape(v, (1, v.data.shape[0])) for v in vectors], axis=0)


def grad_check(f, x, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    Error metric: max over coordinates of |analytic - numeric| / max(1, |analytic|).
    """
    if not x.data.flags["C_CONTIGUOUS"]:
        x.data = np.ascontiguousarray(x.data)
    x.grad = None
    out = f(x)
    if not np.all(np.isfinite(out.data)):
        raise ValueError("grad_check: function value is not finite")
    out.backward()
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(x).data)
        flat[i] = orig - eps
        lo = float(f(x).data)
        flat[i] = orig
        numeric[i] = (hi - lo) / (2 * eps)
    numeric = numeric.reshape(x.data.shape)
    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))
