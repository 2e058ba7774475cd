"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every trainable path in the engine runs through this tape so that one
finite-difference harness can certify all analytic gradients.  The set of
primitives is deliberately small; composite operations (softmax, cosine
matrices, ...) are built from them in the modules that need them.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, _parents=()):
        self.data = np.asarray(data, dtype=np.float64 if isinstance(data, (int, float)) else None)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = _parents

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- graph plumbing -------------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        self.grad = np.ones_like(self.data)
        for t in reversed(topo):
            if t._backward is not None:
                t._backward()

    def detach(self):
        return Tensor(self.data.copy())

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data + other.data, self.requires_grad or other.requires_grad,
                     (self, other))

        def bw():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad, other.shape))
        out._backward = bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, self.requires_grad, (self,))

        def bw():
            if self.requires_grad:
                self._accumulate(-out.grad)
        out._backward = bw
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data * other.data, self.requires_grad or other.requires_grad,
                     (self, other))

        def bw():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(out.grad * self.data, other.shape))
        out._backward = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data / other.data, self.requires_grad or other.requires_grad,
                     (self, other))

        def bw():
            if self.requires_grad:
                self._accumulate(_unbroadcast(out.grad / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-out.grad * self.data / other.data ** 2,
                                               other.shape))
        out._backward = bw
        return out

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        assert isinstance(exponent, (int, float))
        out = Tensor(self.data ** exponent, self.requires_grad, (self,))

        def bw():
            if self.requires_grad:
                self._accumulate(out.grad * exponent * self.data ** (exponent - 1))
        out._backward = bw
        return out

    def __matmul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.data @ other.data, self.requires_grad or other.requires_grad,
                     (self, other))

        def bw():
            if self.requires_grad:
                self._accumulate(out.grad @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ out.grad)
        out._backward = bw
        return out

    # -- elementwise functions ------------------------------------------

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), self.requires_grad, (self,))

        def bw():
            if self.requires_grad:
                self._accumulate(out.grad * (self.data > 0))
        out._backward = bw
        return out

    def exp(self):
        out = Tensor(np.exp(self.data), self.requires_grad, (self,))

        def bw():
            if self.requires_grad:
                self._accumulate(out.grad * out.data)
        out._backward = bw
        return out

    def log(self):
        out = Tensor(np.log(self.data), self.requires_grad, (self,))

        def bw():
            if self.requires_grad:
                self._accumulate(out.grad / self.data)
        out._backward = bw
        return out

    def sqrt(self):
        out = Tensor(np.sqrt(self.data), self.requires_grad, (self,))

        def bw():
            if self.requires_grad:
                self._accumulate(out.grad * 0.5 / out.data)
        out._backward = bw
        return out

    def log_sigmoid(self):
        # stable: log sigma(x) = -softplus(-x); d/dx = sigma(-x)
        x = self.data
        out = Tensor(-np.logaddexp(0.0, -x), self.requires_grad, (self,))

        def bw():
            # sigma(-x) written as 1 / (1 + e^x)
            if self.requires_grad:
                self._accumulate(out.grad / (1.0 + np.exp(x)))
        out._backward = bw
        return out

    def clip(self, lo, hi):
        out = Tensor(np.clip(self.data, lo, hi), self.requires_grad, (self,))

        def bw():
            if self.requires_grad:
                mask = (self.data >= lo) & (self.data <= hi)
                self._accumulate(out.grad * mask)
        out._backward = bw
        return out

    # -- reductions and shape ops ---------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims),
                     self.requires_grad, (self,))

        def bw():
            if self.requires_grad:
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, self.shape).copy())
        out._backward = bw
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    @property
    def T(self):
        out = Tensor(self.data.T, self.requires_grad, (self,))

        def bw():
            if self.requires_grad:
                self._accumulate(out.grad.T)
        out._backward = bw
        return out

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), self.requires_grad, (self,))

        def bw():
            if self.requires_grad:
                self._accumulate(out.grad.reshape(self.shape))
        out._backward = bw
        return out

    def gather_rows(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        out = Tensor(self.data[idx], self.requires_grad, (self,))

        def bw():
            if self.requires_grad:
                g = np.zeros_like(self.data)
                np.add.at(g, idx, out.grad)
                self._accumulate(g)
        out._backward = bw
        return out


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 any(t.requires_grad for t in tensors), tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]

    def bw():
        offset = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                sl = [slice(None)] * out.grad.ndim
                sl[axis] = slice(offset, offset + size)
                t._accumulate(out.grad[tuple(sl)])
            offset += size
    out._backward = bw
    return out


def spmm(matrix, dense):
    """Sparse constant @ dense Tensor; backward is matrix.T @ grad."""
    assert sp.issparse(matrix)
    dense = as_tensor(dense)
    out = Tensor(matrix @ dense.data, dense.requires_grad, (dense,))

    def bw():
        if dense.requires_grad:
            dense._accumulate(matrix.T @ out.grad)
    out._backward = bw
    return out


def softmax(x: Tensor, axis=-1) -> Tensor:
    shifted = x - Tensor(x.data.max(axis=axis, keepdims=True))
    e = shifted.exp()
    return e / e.sum(axis=axis, keepdims=True)


def row_norms(x: Tensor, eps=1e-12) -> Tensor:
    """Euclidean norm of every row, shape (n, 1), floor-guarded by eps."""
    return ((x * x).sum(axis=1, keepdims=True) + eps * eps).sqrt()


def finite_difference_check(fn, params, n_points=10, rtol=1e-3, atol=1e-5, seed=0,
                            delta=1e-6):
    """Compare analytic gradients of scalar `fn(params)` with central differences.

    `params` is a list of Tensors with requires_grad=True (float64).  Checks
    `n_points` random coordinates per parameter; raises AssertionError on
    mismatch.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.grad = None
    loss = fn()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in params]
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = min(n_points, flat.size)
        coords = rng.choice(flat.size, size=n, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + delta
            hi = fn().data.item()
            flat[c] = orig - delta
            lo = fn().data.item()
            flat[c] = orig
            fd = (hi - lo) / (2 * delta)
            an = grad.reshape(-1)[c]
            if not np.isclose(an, fd, rtol=rtol, atol=atol):
                raise AssertionError(
                    f"gradient mismatch at coord {c}: analytic={an}, fd={fd}")
    return True
