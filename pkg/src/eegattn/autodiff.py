"""Dense-tensor arithmetic with reverse-mode differentiation.

Implements exactly the operator set the attention CNN needs: 1-D
convolution, batch normalization, pooling, affine layers, ReLU, Sigmoid,
Softmax, matrix products, elementwise ops and concatenation. Values are
numpy arrays; each forward op optionally records its inputs so a single
reverse sweep can accumulate gradients.

The recorded graph lives only as long as the output tensors do: there is
no persistent tape. Tensors inside a recorded graph are treated as
immutable, and one graph must stay on one thread; independent graphs over
shared read-only parameters may run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """A node in the computation record: a value plus optional gradient.

    Leaf tensors created with ``requires_grad=True`` receive their
    gradient in ``.grad`` after ``backward``; intermediate gradients are
    materialized only transiently during the reverse sweep.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None
        self._op = ""

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        grad = ", grad" if self.requires_grad else ""
        op = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{grad}{op})"

    def detach(self):
        return Tensor(self.data)

    # operator sugar used throughout the model code
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def backward(self):
        backward(self)


def _result(data, parents, backward_fn, op=""):
    """Build an op output, recording the graph only when needed."""
    tracked = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data)
    if tracked:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        out._op = op
    return out


def _coerce(value, like):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(loss):
    """Reverse sweep from a scalar loss.

    Writes gradients into ``.grad`` of every reachable leaf tensor with
    ``requires_grad`` (overwriting any previous value, so repeated calls
    on the same graph are bit-identical). Intermediate gradients are held
    in a transient map and dropped as soon as they are consumed.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    # iterative post-order: deep graphs (the full backbone) would blow the
    # recursion limit
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward_fn is None:
            if node.requires_grad:
                node.grad = g
            continue
        for parent, pg in zip(node._parents, node._backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _coerce(b, a)

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result(a.data + b.data, (a, b), bw, "add")


def mul(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _coerce(b, a)

    def bw(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _result(a.data * b.data, (a, b), bw, "mul")


def relu(x):
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _result(np.where(mask, x.data, 0.0), (x,), bw, "relu")


def sigmoid(x):
    # plain formula is stable under IEEE semantics: exp overflow -> inf -> 0
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-x.data))

    def bw(g):
        return (g * y * (1.0 - y),)

    return _result(y, (x,), bw, "sigmoid")


def log(x):
    def bw(g):
        return (g / x.data,)

    return _result(np.log(x.data), (x,), bw, "log")


def clip_min(x, lo):
    mask = x.data > lo

    def bw(g):
        return (g * mask,)

    return _result(np.maximum(x.data, lo), (x,), bw, "clip_min")


def softmax(x, axis):
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"softmax axis {axis} out of range for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return _result(y, (x,), bw, "softmax")


def tsum(x, axis=None, keepdims=False):
    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _result(x.data.sum(axis=axis, keepdims=keepdims), (x,), bw, "sum")


def tmean(x, axis=None, keepdims=False):
    if axis is None:
        count = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.data.shape[a] for a in axes]))

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g / count, x.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.data.shape).copy(),)

    return _result(x.data.mean(axis=axis, keepdims=keepdims), (x,), bw, "mean")


def reshape(x, shape):
    old = x.data.shape

    def bw(g):
        return (g.reshape(old),)

    return _result(x.data.reshape(shape), (x,), bw, "reshape")


def swapaxes(x, a, b):
    def bw(g):
        return (g.swapaxes(a, b),)

    return _result(x.data.swapaxes(a, b), (x,), bw, "swapaxes")


def concat(tensors, axis):
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis),
                   tensors, bw, "concat")


def matmul(a, b):
    def bw(g):
        return (g @ b.data.swapaxes(-1, -2), a.data.swapaxes(-1, -2) @ g)

    return _result(a.data @ b.data, (a, b), bw, "matmul")


def linear(x, weight, bias):
    """Affine map: x[B, D_in] -> x @ weight.T + bias with weight[D_out, D_in]."""
    y = x.data @ weight.data.T + bias.data

    def bw(g):
        return (g @ weight.data, g.T @ x.data, g.sum(axis=0))

    return _result(y, (x, weight, bias), bw, "linear")


def gather_rows(x, index):
    """Pick one column per row: out[i] = x[i, index[i]]."""
    index = np.asarray(index)
    if index.ndim != 1 or index.shape[0] != x.data.shape[0]:
        raise ValueError(f"gather_rows index shape {index.shape} does not match rows {x.shape}")
    rows = np.arange(x.data.shape[0])

    def bw(g):
        out = np.zeros_like(x.data)
        out[rows, index] = g
        return (out,)

    return _result(x.data[rows, index], (x,), bw, "gather_rows")


# ---------------------------------------------------------------------------
# convolution, pooling, batch normalization
# ---------------------------------------------------------------------------

def _conv_padding(padding, kernel, stride):
    if padding == "same":
        if stride != 1:
            raise ValueError("'same' padding requires stride 1")
        total = kernel - 1
        left = total // 2
        return left, total - left
    pad = int(padding)
    if pad < 0:
        raise ValueError("padding must be non-negative")
    return pad, pad


def conv1d(x, kernel, stride=1, padding=0):
    """Cross-correlation (no kernel flip) along the last axis.

    x: [C_in, T] or [B, C_in, T]; kernel: [C_out, C_in, K].
    Output length is floor((T + pad_left + pad_right - K) / stride) + 1.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or kernel.data.ndim != 3:
        raise ValueError(f"conv1d expects [B, C, T] input and [C_out, C_in, K] kernel, "
                         f"got {x.shape} and {kernel.shape}")
    batch, c_in, t_in = xd.shape
    c_out, c_k, k = kernel.data.shape
    if c_k != c_in:
        raise ValueError(f"conv1d channel mismatch: input has {c_in} channels "
                         f"(shape {tuple(xd.shape)}) but kernel expects {c_k} "
                         f"(shape {tuple(kernel.data.shape)})")
    left, right = _conv_padding(padding, k, stride)
    if k > t_in + left + right:
        raise ValueError(f"kernel width {k} exceeds padded input length {t_in + left + right}")
    xp = np.pad(xd, ((0, 0), (0, 0), (left, right))) if left or right else xd
    windows = sliding_window_view(xp, k, axis=2)[:, :, ::stride]
    t_out = windows.shape[2]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(batch * t_out, c_in * k)
    kmat = kernel.data.reshape(c_out, c_in * k)
    y = (cols @ kmat.T).reshape(batch, t_out, c_out).transpose(0, 2, 1)
    if squeeze:
        y = y[0]

    t_pad = t_in + left + right

    def bw(g):
        g3 = g[None] if squeeze else g
        g2 = np.ascontiguousarray(g3.transpose(0, 2, 1)).reshape(batch * t_out, c_out)
        grad_kernel = (g2.T @ cols).reshape(c_out, c_in, k) if kernel.requires_grad else None
        grad_x = None
        if x.requires_grad:
            gcols = (g2 @ kmat).reshape(batch, t_out, c_in, k).transpose(0, 2, 1, 3)
            gxp = np.zeros((batch, c_in, t_pad), dtype=g.dtype)
            for j in range(k):
                gxp[:, :, j:j + stride * t_out:stride] += gcols[:, :, :, j]
            grad_x = gxp[:, :, left:t_pad - right] if (left or right) else gxp
            if squeeze:
                grad_x = grad_x[0]
        return grad_x, grad_kernel

    return _result(y, (x, kernel), bw, "conv1d")


def maxpool1d(x, kernel=2, stride=2, padding=0):
    """Max pooling over the last axis; padding uses -inf so it never wins."""
    xd = x.data
    if padding:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding)), constant_values=-np.inf)
    windows = sliding_window_view(xd, kernel, axis=2)[:, :, ::stride]
    idx = windows.argmax(axis=3)
    y = np.take_along_axis(windows, idx[..., None], axis=3)[..., 0]
    batch, chans, t_out = y.shape

    def bw(g):
        gp = np.zeros(xd.shape, dtype=g.dtype)
        pos = np.arange(t_out)[None, None, :] * stride + idx
        bi = np.arange(batch)[:, None, None]
        ci = np.arange(chans)[None, :, None]
        np.add.at(gp, (np.broadcast_to(bi, idx.shape), np.broadcast_to(ci, idx.shape), pos), g)
        if padding:
            gp = gp[:, :, padding:-padding]
        return (gp,)

    return _result(y, (x,), bw, "maxpool1d")


def avgpool1d(x, kernel=2, stride=2):
    windows = sliding_window_view(x.data, kernel, axis=2)[:, :, ::stride]
    y = windows.mean(axis=3)
    t_out = y.shape[2]

    def bw(g):
        gp = np.zeros_like(x.data)
        share = g / kernel
        for j in range(kernel):
            gp[:, :, j:j + stride * t_out:stride] += share
        return (gp,)

    return _result(y, (x,), bw, "avgpool1d")


@dataclass
class BatchNormState:
    """Learnable scale/shift plus running statistics for one channel axis."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5

    @classmethod
    def create(cls, channels, dtype=np.float64, momentum=0.1, epsilon=1e-5):
        return cls(
            gamma=Tensor(np.ones(channels, dtype=dtype), requires_grad=True),
            beta=Tensor(np.zeros(channels, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            epsilon=epsilon,
        )


def batchnorm1d(x, state, training):
    """Per-channel normalization of a [B, C, T] tensor.

    Training mode normalizes by batch statistics (population variance over
    the B and T axes) and updates the running statistics in place; eval
    mode normalizes by the running statistics.
    """
    if x.data.ndim != 3:
        raise ValueError(f"batchnorm1d expects [B, C, T], got shape {x.shape}")
    batch, chans, t_len = x.data.shape
    if chans != state.gamma.data.shape[0]:
        raise ValueError(f"batchnorm1d channel mismatch: input has {chans}, "
                         f"state has {state.gamma.data.shape[0]}")
    if training:
        n = batch * t_len
        if n < 2:
            raise ValueError(f"batch normalization in training mode needs B*T >= 2 "
                             f"per channel, got {n}")
        mean = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mean
        state.running_var = (1.0 - m) * state.running_var + m * var
    else:
        mean = state.running_mean.astype(x.data.dtype, copy=False)
        var = state.running_var.astype(x.data.dtype, copy=False)
    inv = 1.0 / np.sqrt(var + state.epsilon)
    xhat = (x.data - mean[:, None]) * inv[:, None]
    y = state.gamma.data[:, None] * xhat + state.beta.data[:, None]
    gamma = state.gamma
    beta = state.beta

    def bw(g):
        dgamma = (g * xhat).sum(axis=(0, 2)) if gamma.requires_grad else None
        dbeta = g.sum(axis=(0, 2)) if beta.requires_grad else None
        if not x.requires_grad:
            return None, dgamma, dbeta
        if training:
            dxhat = g * gamma.data[:, None]
            mean_dxhat = dxhat.mean(axis=(0, 2), keepdims=True)
            mean_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 2), keepdims=True)
            dx = inv[:, None] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
        else:
            dx = g * (gamma.data * inv)[:, None]
        return dx, dgamma, dbeta

    return _result(y, (x, gamma, beta), bw, "batchnorm1d")


# ---------------------------------------------------------------------------
# numerical gradient checking
# ---------------------------------------------------------------------------

def numerical_gradient(fn, tensor, indices=None, h=1e-5):
    """Central finite differences of a scalar-valued fn w.r.t. one tensor.

    fn is re-evaluated after perturbing tensor.data in place; indices is an
    iterable of flat indices (defaults to all elements).
    """
    flat = tensor.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    grads = {}
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        plus = float(fn().data)
        flat[i] = orig - h
        minus = float(fn().data)
        flat[i] = orig
        grads[i] = (plus - minus) / (2.0 * h)
    return grads


def gradcheck(fn, tensors, h=1e-5, rel_tol=1e-4, abs_tol=1e-8, max_per_tensor=None, rng=None):
    """Compare analytic gradients of scalar fn() against finite differences.

    Returns (ok, max_relative_error) over every checked element. With
    max_per_tensor set, a random subset of elements per tensor is checked
    (rng must then be provided for determinism).
    """
    loss = fn()
    backward(loss)
    worst = 0.0
    ok = True
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat_analytic = analytic.reshape(-1)
        n = flat_analytic.size
        if max_per_tensor is not None and n > max_per_tensor:
            indices = np.sort(rng.choice(n, size=max_per_tensor, replace=False))
        else:
            indices = range(n)
        numeric = numerical_gradient(fn, t, indices=indices, h=h)
        for i, num in numeric.items():
            ana = float(flat_analytic[i])
            diff = abs(ana - num)
            rel = diff / max(abs(ana), abs(num), 1e-12)
            if diff > abs_tol:
                worst = max(worst, rel)
                if rel > rel_tol:
                    ok = False
    return ok, worst
