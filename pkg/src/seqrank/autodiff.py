"""Minimal reverse-mode autodiff over numpy arrays.

Every trainable operation in the package is built from these primitives so
its analytic gradient can be checked against central finite differences.
Values are immutable by convention: ops never write into an input's buffer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ContractViolation(ValueError):
    """Raised when an operation's shape/domain preconditions are violated."""


def _unbroadcast(grad, shape):
    # reduce a broadcasted gradient back to the original operand shape
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ContractViolation("backward() without grad requires a scalar")
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                topo.append(node)
            else:
                stack.append((node, True))
                for p in node._parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.grad is not None or not node._parents:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data
        return Tensor(out_data, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g, self.data.shape),
                                           _unbroadcast(g, other.data.shape)))

    __radd__ = __add__

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data
        return Tensor(out_data, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g * other.data, self.data.shape),
                                           _unbroadcast(g * self.data, other.data.shape)))

    __rmul__ = __mul__

    def __neg__(self):
        return Tensor(-self.data, _parents=(self,), _backward=lambda g: (-g,))

    def __sub__(self, other):
        other = as_tensor(other)
        return Tensor(self.data - other.data, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g, self.data.shape),
                                           _unbroadcast(-g, other.data.shape)))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __truediv__(self, other):
        other = as_tensor(other)
        out_data = self.data / other.data
        return Tensor(out_data, _parents=(self, other),
                      _backward=lambda g: (_unbroadcast(g / other.data, self.data.shape),
                                           _unbroadcast(-g * out_data / other.data, other.data.shape)))

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise ContractViolation("only scalar exponents are supported")
        out_data = self.data ** exponent
        return Tensor(out_data, _parents=(self,),
                      _backward=lambda g: (g * exponent * self.data ** (exponent - 1),))

    def __matmul__(self, other):
        other = as_tensor(other)
        out_data = np.matmul(self.data, other.data)

        def backward(g):
            a, b = self.data, other.data
            if b.ndim == 1:
                ga = np.multiply.outer(g, b) if a.ndim > 1 else g * b
                gb = np.matmul(np.swapaxes(a, -1, -2), g) if a.ndim > 1 else g * a
            elif a.ndim == 1:
                ga = np.matmul(g, np.swapaxes(b, -1, -2))
                gb = np.multiply.outer(a, g)
            else:
                ga = np.matmul(g, np.swapaxes(b, -1, -2))
                gb = np.matmul(np.swapaxes(a, -1, -2), g)
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return Tensor(out_data, _parents=(self, other), _backward=backward)

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        return Tensor(self.data.reshape(shape), _parents=(self,),
                      _backward=lambda g: (g.reshape(old),))

    def transpose(self, axes):
        inv = np.argsort(axes)
        return Tensor(self.data.transpose(axes), _parents=(self,),
                      _backward=lambda g: (g.transpose(inv),))

    def __getitem__(self, key):
        out_data = self.data[key]

        def backward(g):
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)
            return (full,)

        return Tensor(out_data, _parents=(self,), _backward=backward)

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, self.data.shape).copy(),)
            g_exp = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g_exp, self.data.shape).copy(),)

        return Tensor(out_data, _parents=(self,), _backward=backward)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis, keepdims=False):
        out_data = self.data.max(axis=axis, keepdims=keepdims)

        def backward(g):
            expanded = out_data if keepdims else np.expand_dims(out_data, axis)
            hit = (self.data == expanded).astype(np.float64)
            hit /= hit.sum(axis=axis, keepdims=True)
            g_exp = g if keepdims else np.expand_dims(g, axis)
            return (hit * g_exp,)

        return Tensor(out_data, _parents=(self,), _backward=backward)

    # -- elementwise nonlinearities ------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)
        return Tensor(out_data, _parents=(self,), _backward=lambda g: (g * out_data,))

    def log(self):
        if np.any(self.data <= 0):
            raise ContractViolation("log of non-positive value")
        return Tensor(np.log(self.data), _parents=(self,),
                      _backward=lambda g: (g / self.data,))

    def relu(self):
        out_data = np.maximum(self.data, 0.0)
        return Tensor(out_data, _parents=(self,),
                      _backward=lambda g: (g * (self.data > 0),))

    def sigmoid(self):
        x = self.data
        out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                            np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return Tensor(out_data, _parents=(self,),
                      _backward=lambda g: (g * out_data * (1.0 - out_data),))

    def tanh(self):
        out_data = np.tanh(self.data)
        return Tensor(out_data, _parents=(self,),
                      _backward=lambda g: (g * (1.0 - out_data ** 2),))

    def clamp(self, lo, hi):
        out_data = np.clip(self.data, lo, hi)
        inside = (self.data > lo) & (self.data < hi)
        return Tensor(out_data, _parents=(self,),
                      _backward=lambda g: (g * inside,))


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data):
    """A leaf tensor that participates in gradients."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out_data, _parents=tuple(tensors), _backward=backward)


def embedding_lookup(table, ids):
    """Gather rows of `table` (Tensor, n x d) by an integer id array."""
    ids = np.asarray(ids)
    n = table.data.shape[0]
    if ids.min(initial=0) < 0 or (ids.size and ids.max() >= n):
        raise ContractViolation("embedding id out of range")
    out_data = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return (full,)

    return Tensor(out_data, _parents=(table,), _backward=backward)


def dropout(x, rate, rng, training):
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep)


def softmax_masked(logits, mask):
    """Softmax along the last axis with hard exclusion.

    mask is boolean with True = excluded; excluded positions get probability
    exactly zero. A fully-masked row yields the all-zero row instead of NaN,
    so an encoder position whose entire key set is masked reads nothing.
    """
    logits = as_tensor(logits)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.data.shape:
        try:
            mask = np.broadcast_to(mask, logits.data.shape)
        except ValueError as err:
            raise ContractViolation("mask shape does not match logits") from err
    keep = Tensor((~mask).astype(np.float64))
    # detached shift for numerical stability; softmax is shift-invariant
    shifted = np.where(mask, -np.inf, logits.data)
    shift = shifted.max(axis=-1, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    e = (logits - Tensor(shift)).exp() * keep
    denom = e.sum(axis=-1, keepdims=True)
    safe = denom + Tensor((denom.data == 0.0).astype(np.float64))
    return e / safe


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalize over the last axis with population variance."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.data.shape[-1]
    if gamma.data.shape[-1] != d or beta.data.shape[-1] != d:
        raise ContractViolation("gamma/beta length does not match input")
    if eps <= 0:
        raise ContractViolation("eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = (var + eps) ** -0.5
    return gamma * (centered * inv) + beta


@dataclass
class GradReport:
    max_abs_err: float
    max_rel_err: float
    worst_index: tuple
    analytic: float
    numeric: float

    def passed(self, tol_rel):
        return self.max_rel_err <= tol_rel


def grad_check(fn, params, step=1e-5, tol_rel=1e-4):
    """Compare fn's analytic gradient against central finite differences.

    fn maps a dict of named parameter Tensors to a scalar Tensor and must be
    deterministic. Relative error uses an absolute floor so coordinates with
    near-zero gradient are judged on absolute finite-difference noise.
    """
    for p in params.values():
        p.zero_grad()
    out = fn(params)
    if not np.isfinite(out.data).all():
        raise FloatingPointError("non-finite function value in grad_check")
    out.backward()
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}

    report = GradReport(0.0, 0.0, ("", ()), 0.0, 0.0)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(fn(params).data)
            flat[i] = orig - step
            f_minus = float(fn(params).data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError("non-finite function value in grad_check")
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = a_flat[i]
            abs_err = abs(a - numeric)
            rel_err = abs_err / max(abs(a) + abs(numeric), 1e-3)
            if rel_err > report.max_rel_err:
                idx = np.unravel_index(i, p.data.shape)
                report = GradReport(abs_err, rel_err, (name, idx), float(a), numeric)
            else:
                report.max_abs_err = max(report.max_abs_err, abs_err)
    return report
