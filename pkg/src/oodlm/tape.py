"""Minimal reverse-mode autodiff over numpy arrays.

Just enough machinery for the two model families trained here: broadcastable
arithmetic, matmul, gathers for embeddings, layer norm, softmax, and a fused
softmax cross-entropy.  Dtype follows the inputs, so the same model code runs
in float32 for training and float64 for finite-difference gradient checks.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _accumulate(self, g) -> None:
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad += g

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.grad is not None})"


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, like=a)
    out_data = a.data + b.data

    def backward(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad, b.data.shape))

    return _result(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, like=a)
    out_data = a.data * b.data

    def backward(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad * a.data, b.data.shape))

    return _result(out_data, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = _wrap(a)
    c = a.data.dtype.type(c)
    out_data = a.data * c

    def backward(out):
        if a.requires_grad:
            a._accumulate(out.grad * c)

    return _result(out_data, (a,), backward)


def affine(a, mult: float, shift: float) -> Tensor:
    """mult * a + shift with scalar constants (used for 1 - z gates)."""
    a = _wrap(a)
    m = a.data.dtype.type(mult)
    out_data = a.data * m + a.data.dtype.type(shift)

    def backward(out):
        if a.requires_grad:
            a._accumulate(out.grad * m)

    return _result(out_data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = _wrap(a)
    b = _wrap(b, like=a)
    out_data = np.matmul(a.data, b.data)

    def backward(out):
        g = out.grad
        if a.requires_grad:
            if b.data.ndim == 1:
                ga = np.multiply.outer(g, b.data)
            else:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            if a.data.ndim == 1:
                gb = np.multiply.outer(a.data, g)
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _result(out_data, (a, b), backward)


def sigmoid(a: Tensor) -> Tensor:
    a = _wrap(a)
    s = 1.0 / (1.0 + np.exp(-a.data))

    def backward(out):
        if a.requires_grad:
            a._accumulate(out.grad * s * (1.0 - s))

    return _result(s, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    a = _wrap(a)
    t = np.tanh(a.data)

    def backward(out):
        if a.requires_grad:
            a._accumulate(out.grad * (1.0 - t * t))

    return _result(t, (a,), backward)


def relu(a: Tensor) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0

    def backward(out):
        if a.requires_grad:
            a._accumulate(out.grad * mask)

    return _result(a.data * mask, (a,), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather; ids is a constant integer array."""
    ids = np.asarray(ids, dtype=np.int64)
    out_data = table.data[ids]

    def backward(out):
        if table.requires_grad:
            g = np.zeros_like(table.data)
            np.add.at(g, ids, out.grad)
            table._accumulate(g)

    return _result(out_data, (table,), backward)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    a = _wrap(a)
    out_data = a.data[..., start:stop]

    def backward(out):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[..., start:stop] = out.grad
            a._accumulate(g)

    return _result(out_data, (a,), backward)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    a = _wrap(a)
    orig = a.data.shape
    out_data = a.data.reshape(shape)

    def backward(out):
        if a.requires_grad:
            a._accumulate(out.grad.reshape(orig))

    return _result(out_data, (a,), backward)


def transpose(a: Tensor, axes: tuple) -> Tensor:
    a = _wrap(a)
    inverse = np.argsort(axes)
    out_data = np.transpose(a.data, axes)

    def backward(out):
        if a.requires_grad:
            a._accumulate(np.transpose(out.grad, inverse))

    return _result(out_data, (a,), backward)


def stack(tensors, axis: int = 1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(out):
        pieces = np.moveaxis(out.grad, axis, 0)
        for t, g in zip(tensors, pieces):
            if t.requires_grad:
                t._accumulate(g)

    return _result(out_data, tuple(tensors), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    x = _wrap(x)
    d = x.data.shape[-1]
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = centered * inv

    def backward(out):
        g = out.grad
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            gsum = gx.sum(axis=-1, keepdims=True)
            gdot = (gx * xhat).sum(axis=-1, keepdims=True)
            x._accumulate(inv * (gx - gsum / d - xhat * gdot / d))

    return _result(xhat * gain.data + bias.data, (x, gain, bias), backward)


def softmax_last(a: Tensor, additive_mask: np.ndarray | None = None) -> Tensor:
    """Stable softmax over the last axis; the optional mask adds large negatives."""
    a = _wrap(a)
    z = a.data if additive_mask is None else a.data + additive_mask
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(out):
        if a.requires_grad:
            g = out.grad
            dot = (g * s).sum(axis=-1, keepdims=True)
            a._accumulate((g - dot) * s)

    return _result(s, (a,), backward)


def softmax_cross_entropy(
    logits: Tensor, targets: np.ndarray, weights: np.ndarray | None = None
) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under softmax(logits).

    ``logits`` has shape (..., C); ``targets`` the matching integer shape.
    Optional nonnegative ``weights`` reweight positions; the result is the
    weighted mean.  Returns a scalar tensor.
    """
    logits = _wrap(logits)
    targets = np.asarray(targets, dtype=np.int64)
    flat = logits.data.reshape(-1, logits.data.shape[-1])
    tgt = targets.reshape(-1)
    if weights is None:
        w = np.ones(tgt.shape[0], dtype=flat.dtype)
    else:
        w = np.asarray(weights, dtype=flat.dtype).reshape(-1)
    wsum = w.sum()
    if wsum <= 0:
        raise ValueError("softmax_cross_entropy needs positive total weight")
    z = flat - flat.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    nll = logsumexp - z[np.arange(tgt.size), tgt]
    loss = float((w * nll).sum() / wsum)

    def backward(out):
        if logits.requires_grad:
            p = np.exp(z - logsumexp[:, None])
            p[np.arange(tgt.size), tgt] -= 1.0
            p *= (w / wsum)[:, None] * out.grad
            logits._accumulate(p.reshape(logits.data.shape).astype(logits.data.dtype))

    return _result(np.asarray(loss, dtype=flat.dtype), (logits,), backward)


def backward(loss: Tensor) -> None:
    """Reverse pass: accumulate grads into every reachable requires_grad tensor."""
    if loss.data.size != 1:
        raise ValueError("backward expects a scalar loss")
    order: list[Tensor] = []
    seen: set = set()
    stack_ = [(loss, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            stack_.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node)
