"""Minimal reverse-mode automatic differentiation over dense real arrays.

A Tensor wraps a float64 ndarray and remembers how it was produced; calling
``backward()`` on a scalar walks the tape in reverse topological order and
accumulates gradients into every reachable leaf with ``requires_grad``.
Supports the handful of ops the network architectures need: elementwise
arithmetic with numpy broadcasting, matmul, relu/tanh/sin/cos, reductions,
indexing, reshape and concatenation.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.grad is not None})"

    # -- graph bookkeeping -------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @staticmethod
    def _result(data, parents, backward) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad or p._parents for p in parents):
            out._parents = parents
            out._backward = backward
        return out

    def backward(self):
        """Reverse accumulation from a scalar output."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        if not (self.requires_grad or self._parents):
            raise ValueError("backward() on a tensor detached from any graph")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is not None:
                for p, pg in zip(node._parents, node._backward(g)):
                    if pg is None:
                        continue
                    if id(p) in grads:
                        grads[id(p)] = grads[id(p)] + pg
                    else:
                        grads[id(p)] = pg

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # -- ops ----------------------------------------------------------------

    def __add__(self, other):
        other = self._lift(other)
        return self._result(
            self.data + other.data,
            (self, other),
            lambda g: (
                _unbroadcast(g, self.data.shape),
                _unbroadcast(g, other.data.shape),
            ),
        )

    __radd__ = __add__

    def __neg__(self):
        return self._result(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        return self._result(
            self.data * other.data,
            (self, other),
            lambda g: (
                _unbroadcast(g * other.data, self.data.shape),
                _unbroadcast(g * self.data, other.data.shape),
            ),
        )

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = self._lift(other)
        a, b = self.data, other.data

        def bw(g):
            if a.ndim == 1 and b.ndim == 1:
                return g * b, g * a
            if b.ndim == 1:
                # contraction over a's last axis
                ga = g[..., None] * b
                gb = (a * g[..., None]).sum(axis=tuple(range(a.ndim - 1)))
                return ga, gb
            if a.ndim == 1:
                if b.ndim != 2:
                    raise NotImplementedError("vector @ >2-d tensor")
                return g @ b.T, np.outer(a, g)
            ga = g @ np.swapaxes(b, -1, -2)
            gb = np.swapaxes(a, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return self._result(a @ b, (self, other), bw)

    def relu(self):
        mask = self.data > 0
        return self._result(self.data * mask, (self,), lambda g: (g * mask,))

    def tanh(self):
        t = np.tanh(self.data)
        return self._result(t, (self,), lambda g: (g * (1.0 - t * t),))

    def sin(self):
        return self._result(
            np.sin(self.data), (self,), lambda g: (g * np.cos(self.data),)
        )

    def cos(self):
        return self._result(
            np.cos(self.data), (self,), lambda g: (-g * np.sin(self.data),)
        )

    def square(self):
        return self._result(
            self.data * self.data, (self,), lambda g: (2.0 * g * self.data,)
        )

    def exp(self):
        e = np.exp(self.data)
        return self._result(e, (self,), lambda g: (g * e,))

    def log(self):
        return self._result(
            np.log(self.data), (self,), lambda g: (g / self.data,)
        )

    def sum(self, axis=None):
        def bw(g):
            if axis is None:
                return (np.broadcast_to(g, self.data.shape).copy(),)
            gg = np.expand_dims(g, axis)
            return (np.broadcast_to(gg, self.data.shape).copy(),)

        return self._result(self.data.sum(axis=axis), (self,), bw)

    def mean(self):
        n = self.data.size
        return self._result(
            self.data.mean(),
            (self,),
            lambda g: (np.broadcast_to(g / n, self.data.shape).copy(),),
        )

    def reshape(self, *shape):
        old = self.data.shape
        return self._result(
            self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),)
        )

    def __getitem__(self, key):
        def bw(g):
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)
            return (full,)

        return self._result(self.data[key], (self,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._result(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw
    )


def stack_last(tensors) -> Tensor:
    """Stack tensors along a new trailing axis."""
    tensors = [Tensor._lift(t) for t in tensors]

    def bw(g):
        return tuple(g[..., i] for i in range(len(tensors)))

    return Tensor._result(
        np.stack([t.data for t in tensors], axis=-1), tuple(tensors), bw
    )


class AdamState:
    """Per-parameter first/second moment buffers and the step counter."""

    def __init__(self, params):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0


def adam_step(
    params,
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update in place; parameters with no gradient are skipped."""
    state.t += 1
    t = state.t
    for k, p in enumerate(params):
        if p.grad is None:
            continue
        g = p.grad
        state.m[k] = beta1 * state.m[k] + (1 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1 - beta2) * g * g
        m_hat = state.m[k] / (1 - beta1**t)
        v_hat = state.v[k] / (1 - beta2**t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None
