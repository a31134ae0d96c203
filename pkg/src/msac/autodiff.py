"""Reverse-mode differentiation at operator granularity.

Forward operators are plain numpy functions. Decorating one with
:func:`primitive` makes it accept :class:`Node` arguments as well; when any
positional argument is a Node the call is recorded on the graph together with
the operator's vector-Jacobian product, registered via :func:`defvjp`.
Composite operators (attention, SAC, MSAC) need no gradient code of their own.
"""

import functools
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


class Node:
    """A differentiable value and the operation that produced it."""

    __array_ufunc__ = None  # make ndarray <op> Node dispatch to Node's reflected ops

    def __init__(self, value, op_tag="leaf", parents=(), vjp=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.op_tag = op_tag
        self.parents = list(parents)
        self.vjp = vjp
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def __repr__(self):
        return f"Node({self.op_tag}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        if isinstance(other, Node):
            raise TypeError("division by a Node is not supported")
        return multiply(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return multiply(self, -1.0)


def value_of(x):
    return x.value if isinstance(x, Node) else x


def primitive(fn):
    """Make ``fn`` graph-aware. Keyword arguments are never differentiated."""

    @functools.wraps(fn)
    def wrapped(*args, **kwargs):
        if not any(isinstance(a, Node) for a in args):
            return fn(*args, **kwargs)
        values = [value_of(a) for a in args]
        out = fn(*values, **kwargs)
        if wrapped.vjp is None:
            raise NotImplementedError(f"no gradient registered for {fn.__name__}")
        parents = [(i, a) for i, a in enumerate(args) if isinstance(a, Node)]

        def vjp(g):
            grads = wrapped.vjp(g, out, *values, **kwargs)
            return [grads[i] for i, _ in parents]

        return Node(out, fn.__name__, [a for _, a in parents], vjp)

    wrapped.vjp = None
    wrapped.raw = fn
    return wrapped


def defvjp(prim, vjp):
    """Register ``vjp(g, out, *args, **kwargs) -> tuple of per-argument grads``."""
    prim.vjp = vjp
    return prim


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


@primitive
def add(a, b):
    return np.add(a, b)


defvjp(add, lambda g, out, a, b: (_unbroadcast(g, np.shape(a)), _unbroadcast(g, np.shape(b))))


@primitive
def subtract(a, b):
    return np.subtract(a, b)


defvjp(subtract, lambda g, out, a, b: (_unbroadcast(g, np.shape(a)), _unbroadcast(-g, np.shape(b))))


@primitive
def multiply(a, b):
    return np.multiply(a, b)


defvjp(multiply, lambda g, out, a, b: (_unbroadcast(g * b, np.shape(a)), _unbroadcast(g * a, np.shape(b))))


@primitive
def reshape(x, shape):
    return np.reshape(x, shape)


defvjp(reshape, lambda g, out, x, shape: (np.reshape(g, np.shape(x)), None))


@primitive
def transpose(x, axes=None):
    return np.transpose(x, axes)


def _transpose_vjp(g, out, x, axes=None):
    if axes is None:
        return (np.transpose(g),)
    return (np.transpose(g, np.argsort(axes)),)


defvjp(transpose, _transpose_vjp)


@primitive
def sum_all(x):
    return np.sum(x)


defvjp(sum_all, lambda g, out, x: (np.broadcast_to(g, np.shape(x)).copy(),))


@primitive
def mean_axes(x, axes):
    return np.mean(x, axis=tuple(axes))


def _mean_vjp(g, out, x, axes):
    axes = tuple(a % x.ndim for a in axes)
    count = np.prod([x.shape[a] for a in axes])
    g = np.expand_dims(g, axes)
    return (np.broadcast_to(g / count, x.shape).copy(),)


defvjp(mean_axes, _mean_vjp)


@primitive
def log_softmax(x, axis=-1):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


defvjp(log_softmax, lambda g, out, x, axis=-1: (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),))


@primitive
def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


defvjp(sigmoid, lambda g, out, x: (g * out * (1.0 - out),))


@primitive
def softplus(x):
    return np.logaddexp(0.0, x)


defvjp(softplus, lambda g, out, x: (g * sigmoid(x),))


@primitive
def take_rows(table, ids):
    return table[np.asarray(ids)]


def _take_rows_vjp(g, out, table, ids):
    grad = np.zeros_like(table)
    np.add.at(grad, np.asarray(ids), g)
    return (grad, None)


defvjp(take_rows, _take_rows_vjp)


def backward(root):
    """Populate ``grad`` on every node reachable from the scalar ``root``.

    Returns a dict mapping each leaf Node to its gradient.
    """
    if not isinstance(root, Node):
        raise TypeError("backward expects a Node")
    if root.value.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")

    order = []
    state = {}
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            state[id(node)] = 2
            order.append(node)
            continue
        mark = state.get(id(node))
        if mark == 2:
            continue
        if mark == 1:
            raise ValueError("cycle detected in computation graph")
        state[id(node)] = 1
        stack.append((node, True))
        for parent in node.parents:
            pmark = state.get(id(parent))
            if pmark == 1:
                raise ValueError("cycle detected in computation graph")
            if pmark is None:
                stack.append((parent, False))

    grads = {id(root): np.ones_like(root.value)}
    leaves = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            g = np.zeros_like(node.value)
        node.grad = g
        if not node.parents:
            leaves[node] = g
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    return leaves


def finite_diff_grad(f, x, eps=1e-4):
    """Central-difference gradient of scalar ``f`` at ``x``, one coordinate at a time."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


@dataclass
class GradReport:
    op: str
    max_abs_error: float
    max_rel_error: float
    probe_count: int

    def passed(self, tol):
        return self.max_rel_error < tol
