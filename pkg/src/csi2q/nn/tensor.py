"""Minimal reverse-mode autodiff over numpy arrays.

Only the operations the fingerprinting models need are provided.  Each op
records its parents and a closure that pushes the output gradient back to
them; :meth:`Tensor.backward` walks the graph in reverse topological order.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import InvalidInputError
from . import kernels

_grad_enabled = True

PROB_FLOOR = 1e-12


@contextlib.contextmanager
def no_grad():
    """Run operations without recording a graph."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise InvalidInputError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()

        def visit(node):
            stack = [(node, False)]
            while stack:
                n, done = stack.pop()
                if done:
                    order.append(n)
                    continue
                if id(n) in seen:
                    continue
                seen.add(id(n))
                stack.append((n, True))
                for p in n._parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, c):
        return scale(self, c)

    __rmul__ = __mul__


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"add: shape mismatch {a.shape} vs {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _result(a.data + b.data, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)

    def backward(g):
        a._accumulate(c * g)

    return _result(c * a.data, (a,), backward)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0

    def backward(g):
        x._accumulate(g * mask)

    return _result(np.maximum(x.data, 0.0), (x,), backward)


def mean_time(x) -> Tensor:
    """Mean over the last (time) axis."""
    x = _as_tensor(x)
    n = x.shape[-1]

    def backward(g):
        x._accumulate(np.broadcast_to(g[..., None] / n, x.shape))

    return _result(x.data.mean(axis=-1), (x,), backward)


def linear(x, weight, bias) -> Tensor:
    """``x @ weight + bias`` with ``x`` of shape (B, F_in), weight (F_in, F_out)."""
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.data.ndim != 2 or x.shape[1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise InvalidInputError(f"linear: incompatible shapes {x.shape}, {weight.shape}, {bias.shape}")

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ weight.data.T)
        if weight.requires_grad:
            weight._accumulate(x.data.T @ g)
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0))

    return _result(x.data @ weight.data + bias.data, (x, weight, bias), backward)


def conv1d(x, weight, bias, dilation: int = 1, backend=None) -> Tensor:
    """Dilated causal convolution: left zero padding of ``(K-1)*dilation``.

    ``x`` is (B, C, N), ``weight`` (O, C, K), ``bias`` (O,).  Output (B, O, N);
    position ``n`` only sees inputs at ``n, n-d, ..., n-(K-1)d``.
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.data.ndim != 3 or weight.data.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise InvalidInputError(f"conv1d: incompatible shapes {x.shape} and {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise InvalidInputError(f"conv1d: bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    impl = kernels.get_backend(backend)
    xd = np.ascontiguousarray(x.data)
    wt = np.ascontiguousarray(weight.data.transpose(2, 0, 1))
    out = np.empty((x.shape[0], weight.shape[0], x.shape[2]))
    impl.conv_forward(xd, wt, np.ascontiguousarray(bias.data), int(dilation), out)

    def backward(g):
        g = np.ascontiguousarray(g)
        gx = np.zeros_like(xd)
        gwt = np.zeros_like(wt)
        impl.conv_backward(xd, wt, int(dilation), g, gx, gwt, x.requires_grad)
        if x.requires_grad:
            x._accumulate(gx)
        if weight.requires_grad:
            weight._accumulate(gwt.transpose(1, 2, 0))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2)))

    return _result(out, (x, weight, bias), backward)


def softmax(x) -> Tensor:
    """Softmax over the last axis."""
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        x._accumulate(p * (g - np.sum(g * p, axis=-1, keepdims=True)))

    return _result(p, (x,), backward)


def _one_hot(labels, num_classes):
    labels = np.asarray(labels)
    if labels.ndim == 2:
        return labels.astype(np.float64)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels.astype(np.int64)] = 1.0
    return out


def cross_entropy(probs, labels, floor: float = PROB_FLOOR) -> Tensor:
    """Batch mean of ``-sum_j y_j log(max(p_j, floor))``.

    ``labels`` is either a vector of class indices or a one-hot matrix.
    """
    probs = _as_tensor(probs)
    p = probs.data
    if p.ndim == 1:
        p = p[None, :]
    y = _one_hot(labels, p.shape[-1]).reshape(p.shape)
    clipped = np.maximum(p, floor)
    n = p.shape[0]
    loss = -np.sum(y * np.log(clipped)) / n

    def backward(g):
        grad = np.where(p > floor, -y / clipped, 0.0) / n
        probs._accumulate(float(g) * grad.reshape(probs.shape))

    return _result(np.asarray(loss), (probs,), backward)


def mse(a, b) -> Tensor:
    """Mean of squared differences over every element."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise InvalidInputError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def backward(g):
        d = (2.0 * float(g) / n) * diff
        if a.requires_grad:
            a._accumulate(d)
        if b.requires_grad:
            b._accumulate(-d)

    return _result(np.asarray(np.mean(diff * diff)), (a, b), backward)
