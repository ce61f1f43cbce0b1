"""A small reverse-mode autodiff tape over numpy arrays.

Only the operations the predictor network and the differentiable renderer
need are provided.  Images are NCHW float64 arrays.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable tensor's ``grad``."""
        order, seen = [], set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            order.append(node)

        visit(self)
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _node(data, parents, backward):
    requires = any(p.requires_grad for p in parents)
    return Tensor(data, requires, parents if requires else (), backward if requires else None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _windows(x, k):
    # (N, C, H, W) padded -> (N, C, H', W', k, k) view
    return sliding_window_view(x, (k, k), axis=(2, 3))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-1 'same' convolution with an odd square kernel."""
    k = w.shape[-1]
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = _windows(xp, k)
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        if w.requires_grad:
            _accum(w, np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])))
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            q = k - 1 - pad
            gp = np.pad(g, ((0, 0), (0, 0), (q, q), (q, q))) if q else g
            flipped = w.data[:, :, ::-1, ::-1]
            dx = np.tensordot(_windows(gp, k), flipped, axes=([1, 4, 5], [0, 2, 3]))
            _accum(x, dx.transpose(0, 3, 1, 2))

    return _node(np.ascontiguousarray(out), parents, backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var,
               training: bool, momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization; updates the running moments in place when training.

    running = momentum * running + (1 - momentum) * batch
    """
    axes = (0, 2, 3)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = x.data.size // x.data.shape[1]
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var * m / max(m - 1, 1)
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        if gamma.requires_grad:
            _accum(gamma, np.sum(g * xhat, axis=axes))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * gamma.data[None, :, None, None]
            if training:
                n = x.data.size // x.data.shape[1]
                s1 = dxhat.sum(axis=axes, keepdims=True)
                s2 = np.sum(dxhat * xhat, axis=axes, keepdims=True)
                dx = (n * dxhat - s1 - xhat * s2) * inv[None, :, None, None] / n
            else:
                dx = dxhat * inv[None, :, None, None]
            _accum(x, dx)

    return _node(out, (x, gamma, beta), backward)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope)
    return _node(x.data * scale, (x,), lambda g: _accum(x, g * scale))


def max_pool2(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        onehot = (np.arange(4) == idx[..., None]) * g[..., None]
        dx = onehot.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        _accum(x, dx)

    return _node(out, (x,), backward)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour x2 upsampling."""
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        n, c, h, w = g.shape
        _accum(x, g.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)))

    return _node(out, (x,), backward)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Channel concatenation."""
    ca = a.shape[1]

    def backward(g):
        _accum(a, g[:, :ca])
        _accum(b, g[:, ca:])

    return _node(np.concatenate([a.data, b.data], axis=1), (a, b), backward)


def shade(coeffs: Tensor, basis, lit) -> Tensor:
    """Differentiable cosine-polynomial shading.

    coeffs, basis: (N, P, H, W); lit: (N, H, W) bool, false where shadowed.
    The backward pass is the renderer's adjoint: basis * g, zero in shadow.
    """
    basis = np.asarray(basis, dtype=np.float64)
    lit = np.asarray(lit, dtype=bool)
    out = np.where(lit, np.sum(coeffs.data * basis, axis=1), 0.0)
    return _node(out, (coeffs,), lambda g: _accum(coeffs, basis * np.where(lit, g, 0.0)[:, None]))


def masked_mse(pred: Tensor, target, mask) -> Tensor:
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    resid = np.where(mask, pred.data - target, 0.0)
    value = np.sum(resid**2) / max(n, 1)
    return _node(value, (pred,), lambda g: _accum(pred, g * 2.0 * resid / max(n, 1)))


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _node(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _node(a.data * b.data, (a, b), backward)


def total(x: Tensor) -> Tensor:
    return _node(x.data.sum(), (x,), lambda g: _accum(x, np.broadcast_to(g, x.shape).copy()))
