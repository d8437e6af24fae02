"""Minimal reverse-mode automatic differentiation on numpy arrays.

Graphs are define-by-run: every op returns a Tensor that remembers its
parents and a closure that pushes gradients back into them.  Parameters
and activations are 32-bit by default; reductions (norms, layer-norm
statistics, softmax) accumulate in 64-bit.  The gradient-check harness
may switch the whole engine to float64 via `using_dtype`.
"""
from __future__ import annotations

import numpy as np


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError):
    pass


class NumericsError(AutodiffError):
    pass


_DTYPE = np.float32


def default_dtype():
    return _DTYPE


def set_default_dtype(dtype):
    global _DTYPE
    _DTYPE = np.dtype(dtype).type


class using_dtype:
    """Temporarily switch the engine dtype (used by the check harness)."""

    def __init__(self, dtype):
        self.dtype = dtype

    def __enter__(self):
        self.saved = _DTYPE
        set_default_dtype(self.dtype)
        return self

    def __exit__(self, *exc):
        set_default_dtype(self.saved)
        return False


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values produced by op '{op}'")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g.astype(t.data.dtype, copy=False)


def _make(data, parents, backward_fn, op):
    _check_finite(data, op)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss):
    """Populate gradients of every requires_grad tensor reachable from `loss`."""
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    topo = []
    visited = set()
    stack = [(loss, iter(loss._parents))]
    visited.add(id(loss))
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in visited and p.requires_grad:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            topo.append(node)
            stack.pop()
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def _unbroadcast(g, shape):
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural primitives


def add(a, b):
    a, b = _lift(a), _lift(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), back, "add")


def sub(a, b):
    a, b = _lift(a), _lift(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, -_unbroadcast(g, b.shape))

    return _make(data, (a, b), back, "sub")


def mul(a, b):
    a, b = _lift(a), _lift(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), back, "mul")


def scale(a, s):
    a = _lift(a)
    s = float(s)
    data = a.data * np.asarray(s, dtype=a.data.dtype)

    def back(g):
        _accumulate(a, g * s)

    return _make(data, (a,), back, "scale")


def matmul(a, b):
    """Matrix multiply; batched when the left operand carries leading axes.

    Supported shapes: (..., n, k) @ (k, m) and (..., n, k) @ (..., k, m)
    with identical batch axes.
    """
    a, b = _lift(a), _lift(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")
    if b.data.ndim > 2 and a.data.shape[:-2] != b.data.shape[:-2]:
        raise ShapeError(f"matmul: batch axes disagree for {a.shape} and {b.shape}")
    data = np.matmul(a.data, b.data)

    def back(g):
        if a.requires_grad:
            _accumulate(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            if b.data.ndim == 2 and a.data.ndim > 2:
                a2 = a.data.reshape(-1, a.data.shape[-1])
                g2 = g.reshape(-1, g.shape[-1])
                _accumulate(b, a2.T @ g2)
            else:
                _accumulate(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _make(data, (a, b), back, "matmul")


def concat(tensors, axis=-1):
    tensors = [_lift(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _make(data, tuple(tensors), back, "concat")


def stack(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"stack: incompatible shapes {[t.shape for t in tensors]}")

    def back(g):
        parts = np.split(g, len(tensors), axis=axis)
        for t, part in zip(tensors, parts):
            _accumulate(t, np.squeeze(part, axis=axis))

    return _make(data, tuple(tensors), back, "stack")


def reshape(a, shape):
    a = _lift(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")

    def back(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _make(data, (a,), back, "reshape")


def transpose(a, axes):
    a = _lift(a)
    data = np.transpose(a.data, axes)
    inverse = np.argsort(axes)

    def back(g):
        _accumulate(a, np.transpose(g, inverse))

    return _make(data, (a,), back, "transpose")


def gather(table, indices):
    """Row lookup `table[indices]`; the workhorse behind every embedding."""
    table = _lift(table)
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError("gather: indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ShapeError(
            f"gather: index out of range for table with {table.data.shape[0]} rows"
        )
    data = table.data[idx]

    def back(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, idx, g.astype(table.data.dtype, copy=False))

    return _make(data, (table,), back, "gather")


def gather_axis1(x, indices):
    """Select rows along axis 1 of a 3-D tensor: out[b, i] = x[b, idx[i]]."""
    x = _lift(x)
    if x.data.ndim != 3:
        raise ShapeError(f"gather_axis1: expected a 3-D tensor, got shape {x.shape}")
    idx = np.asarray(indices)
    data = x.data[:, idx, :]
    batch = np.arange(x.data.shape[0])[:, None]

    def back(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            np.add.at(x.grad, (batch, idx[None, :]), g.astype(x.data.dtype, copy=False))

    return _make(data, (x,), back, "gather_axis1")


def slice_last(a, start, stop):
    a = _lift(a)
    data = a.data[..., start:stop]

    def back(g):
        gx = np.zeros_like(a.data)
        gx[..., start:stop] = g
        _accumulate(a, gx)

    return _make(data, (a,), back, "slice_last")


def sum_(a, axis=None, keepdims=False):
    a = _lift(a)
    data = a.data.astype(np.float64).sum(axis=axis, keepdims=keepdims).astype(a.data.dtype)

    def back(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(data, (a,), back, "sum")


def mean_(a, axis=None, keepdims=False):
    a = _lift(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# nonlinearities and normalizers


def relu(a):
    a = _lift(a)
    data = np.maximum(a.data, 0)

    def back(g):
        _accumulate(a, g * (a.data > 0))

    return _make(data, (a,), back, "relu")


def sigmoid(a):
    a = _lift(a)
    data = 1.0 / (1.0 + np.exp(-a.data.astype(np.float64)))
    data = data.astype(a.data.dtype)

    def back(g):
        _accumulate(a, g * data * (1.0 - data))

    return _make(data, (a,), back, "sigmoid")


def tanh(a):
    a = _lift(a)
    data = np.tanh(a.data)

    def back(g):
        _accumulate(a, g * (1.0 - data * data))

    return _make(data, (a,), back, "tanh")


def softmax(a):
    """Softmax over the last axis, max-subtracted, 64-bit accumulation."""
    a = _lift(a)
    x = a.data.astype(np.float64)
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    y64 = e / e.sum(axis=-1, keepdims=True)
    data = y64.astype(a.data.dtype)

    def back(g):
        g64 = g.astype(np.float64)
        dot = (g64 * y64).sum(axis=-1, keepdims=True)
        _accumulate(a, ((g64 - dot) * y64).astype(a.data.dtype))

    return _make(data, (a,), back, "softmax")


def layer_norm(a, gain, bias, eps=1e-5):
    """Layer normalization over the last axis."""
    a, gain, bias = _lift(a), _lift(gain), _lift(bias)
    if gain.data.shape != (a.data.shape[-1],) or bias.data.shape != (a.data.shape[-1],):
        raise ShapeError(
            f"layer_norm: gain/bias must match last axis of {a.shape}, "
            f"got {gain.shape} and {bias.shape}"
        )
    x = a.data.astype(np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    data = (gain.data.astype(np.float64) * xhat + bias.data.astype(np.float64)).astype(a.data.dtype)
    n = a.data.shape[-1]

    def back(g):
        g64 = g.astype(np.float64)
        _accumulate(bias, g64.reshape(-1, n).sum(axis=0).astype(bias.data.dtype))
        _accumulate(gain, (g64 * xhat).reshape(-1, n).sum(axis=0).astype(gain.data.dtype))
        dxhat = g64 * gain.data.astype(np.float64)
        dx = (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        ) * inv
        _accumulate(a, dx.astype(a.data.dtype))

    return _make(data, (a, gain, bias), back, "layer_norm")


def l2_normalize(a, eps=1e-12):
    """Row-wise L2 normalization over the last axis."""
    a = _lift(a)
    x = a.data.astype(np.float64)
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True) + eps)
    y64 = x / norm
    data = y64.astype(a.data.dtype)

    def back(g):
        g64 = g.astype(np.float64)
        dot = (g64 * y64).sum(axis=-1, keepdims=True)
        _accumulate(a, ((g64 - y64 * dot) / norm).astype(a.data.dtype))

    return _make(data, (a,), back, "l2_normalize")


def dropout(a, p, rng):
    """Inverted dropout; call only on the training path."""
    a = _lift(a)
    if p <= 0.0:
        return a
    mask = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return mul(a, Tensor(mask))


def lstm_cell(x, h, c, w_x, w_h, b):
    """Standard LSTM cell update; gate order i, f, g, o along the last axis."""
    x, h, c = _lift(x), _lift(h), _lift(c)
    hidden = h.data.shape[-1]
    if w_x.data.shape[-1] != 4 * hidden or w_h.data.shape[-1] != 4 * hidden:
        raise ShapeError(
            f"lstm_cell: weight columns must be 4*hidden={4 * hidden}, "
            f"got {w_x.shape} and {w_h.shape}"
        )
    z = add(add(matmul(x, w_x), matmul(h, w_h)), b)
    i = sigmoid(slice_last(z, 0, hidden))
    f = sigmoid(slice_last(z, hidden, 2 * hidden))
    g = tanh(slice_last(z, 2 * hidden, 3 * hidden))
    o = sigmoid(slice_last(z, 3 * hidden, 4 * hidden))
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


def gradient_reversal(a, lam):
    """Identity forward; backward multiplies the incoming gradient by -lam."""
    a = _lift(a)
    if not lam > 0:
        raise ValueError(f"gradient_reversal: lambda must be positive, got {lam}")
    data = a.data.copy()

    def back(g):
        _accumulate(a, -lam * g)

    return _make(data, (a,), back, "gradient_reversal")


def detach(a):
    return Tensor(a.data.copy())


# ---------------------------------------------------------------------------
# losses


def cross_entropy(logits, targets):
    """Mean cross-entropy of integer targets against class logits (last axis)."""
    logits = _lift(logits)
    t = np.asarray(targets)
    if t.shape != logits.data.shape[:-1]:
        raise ShapeError(
            f"cross_entropy: targets shape {t.shape} does not match "
            f"logits shape {logits.shape}"
        )
    n_classes = logits.data.shape[-1]
    if t.size and (t.min() < 0 or t.max() >= n_classes):
        raise ShapeError(f"cross_entropy: target index out of range for {n_classes} classes")
    x = logits.data.astype(np.float64)
    x = x - x.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(x).sum(axis=-1, keepdims=True))
    logp = x - logz
    n_rows = max(1, int(np.prod(t.shape))) if t.shape else 1
    picked = np.take_along_axis(logp, t[..., None], axis=-1)
    loss = -picked.sum() / n_rows
    p = np.exp(logp)

    def back(g):
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, t[..., None], 1.0, axis=-1)
        _accumulate(logits, (float(g) * (p - onehot) / n_rows).astype(logits.data.dtype))

    return _make(np.asarray(loss, dtype=logits.data.dtype), (logits,), back, "cross_entropy")


def squared_error(pred, target):
    """Mean squared error between two equal-shape tensors."""
    pred, target = _lift(pred), _lift(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"squared_error: shapes {pred.shape} and {target.shape} disagree"
        )
    diff = pred.data.astype(np.float64) - target.data.astype(np.float64)
    n = max(1, pred.data.size)
    loss = (diff * diff).sum() / n

    def back(g):
        gd = (float(g) * 2.0 * diff / n)
        _accumulate(pred, gd.astype(pred.data.dtype))
        _accumulate(target, (-gd).astype(target.data.dtype))

    return _make(np.asarray(loss, dtype=pred.data.dtype), (pred, target), back, "squared_error")


def uniform_cross_entropy(logits):
    """Mean cross-entropy of the uniform distribution against class logits
    (last axis): for each row, logsumexp(z) - mean_j(z_j)."""
    logits = _lift(logits)
    if logits.data.ndim < 1 or logits.data.shape[-1] < 2:
        raise ShapeError(
            f"uniform_cross_entropy: need at least 2 classes, got shape {logits.shape}"
        )
    x = logits.data.astype(np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True)) + x.max(axis=-1, keepdims=True)
    n_classes = x.shape[-1]
    per_row = (logz[..., 0] - x.mean(axis=-1))
    n_rows = max(1, per_row.size)
    loss = per_row.sum() / n_rows
    p = np.exp(x - logz)

    def back(g):
        _accumulate(logits, (float(g) * (p - 1.0 / n_classes) / n_rows)
                    .astype(logits.data.dtype))

    return _make(np.asarray(loss, dtype=logits.data.dtype), (logits,), back,
                 "uniform_cross_entropy")


# ---------------------------------------------------------------------------
# parameters and optimization


def parameter(shape, rng, std=0.02):
    """Trainable tensor initialized N(0, std); std=0 gives zeros."""
    if std == 0.0:
        data = np.zeros(shape)
    else:
        data = rng.normal(0.0, std, size=shape)
    return Tensor(data.astype(_DTYPE), requires_grad=True)


class AdamW:
    """AdamW with decoupled weight decay, linear warmup, and global-norm clipping."""

    def __init__(self, params, lr=1e-4, weight_decay=1e-4, clip_norm=0.25,
                 warmup_steps=1000, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.warmup_steps = warmup_steps
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def effective_lr(self, step):
        if self.warmup_steps > 0 and step <= self.warmup_steps:
            return self.lr * step / self.warmup_steps
        return self.lr

    def step(self):
        grads = {}
        sq = 0.0
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericsError(f"non-finite gradient in parameter '{name}'")
            grads[name] = g
            sq += float((g.astype(np.float64) ** 2).sum())
        norm = np.sqrt(sq)
        clip_scale = self.clip_norm / norm if (self.clip_norm and norm > self.clip_norm) else 1.0
        self.step_count += 1
        t = self.step_count
        lr_t = self.effective_lr(t)
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = grads[name] * clip_scale
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p.data -= (lr_t * self.weight_decay) * p.data
            p.data -= lr_t * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return norm
