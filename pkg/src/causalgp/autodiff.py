"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just enough machinery to differentiate the feature extractors: a tape of
:class:`Tensor` nodes built during the forward pass, walked backwards by
:func:`backprop`.  All values are float64 ndarrays.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn")

    def __init__(self, value, parents=(), backward_fn=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.value.shape


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value + b.value, (a, b))

    def backward(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    out.backward_fn = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    out = Tensor(a.value @ b.value, (a, b))

    def backward(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(ga, a.value.shape), _unbroadcast(gb, b.value.shape)

    out.backward_fn = backward
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    out = Tensor(np.where(mask, a.value, 0.0), (a,))
    out.backward_fn = lambda g: (np.where(mask, g, 0.0),)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.value.reshape(shape), (a,))
    out.backward_fn = lambda g: (g.reshape(a.value.shape),)
    return out


def transpose(a: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)
    out = Tensor(a.value.transpose(axes), (a,))
    out.backward_fn = lambda g: (g.transpose(inverse),)
    return out


def take(a: Tensor, indices, axis: int) -> Tensor:
    """Gather 1-D ``indices`` along ``axis``; repeats accumulate on backward."""
    indices = np.asarray(indices, dtype=int)
    out = Tensor(np.take(a.value, indices, axis=axis), (a,))

    def backward(g):
        ga = np.zeros_like(a.value)
        sel = [slice(None)] * a.value.ndim
        sel[axis] = indices
        np.add.at(ga, tuple(sel), g)
        return (ga,)

    out.backward_fn = backward
    return out


def pad_axis(a: Tensor, axis: int, before: int, after: int) -> Tensor:
    widths = [(0, 0)] * a.value.ndim
    widths[axis] = (before, after)
    out = Tensor(np.pad(a.value, widths), (a,))

    def backward(g):
        sel = [slice(None)] * a.value.ndim
        sel[axis] = slice(before, before + a.value.shape[axis])
        return (g[tuple(sel)],)

    out.backward_fn = backward
    return out


def max_axis(a: Tensor, axis: int) -> Tensor:
    arg = np.argmax(a.value, axis=axis)
    out = Tensor(np.max(a.value, axis=axis), (a,))

    def backward(g):
        ga = np.zeros_like(a.value)
        np.put_along_axis(
            ga, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis
        )
        return (ga,)

    out.backward_fn = backward
    return out


def backprop(output: Tensor, seed_grad: np.ndarray) -> None:
    """Accumulate gradients of ``output`` (weighted by ``seed_grad``) into
    ``.grad`` of every tensor reachable on the tape."""
    seed_grad = np.asarray(seed_grad, dtype=float)
    if seed_grad.shape != output.value.shape:
        raise ValueError(
            f"seed gradient shape {seed_grad.shape} does not match "
            f"output shape {output.value.shape}"
        )
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    for node in order:
        node.grad = None
    output.grad = seed_grad
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.backward_fn(node.grad)):
            if parent.grad is None:
                parent.grad = g.copy()
            else:
                parent.grad = parent.grad + g
    return None
