"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op records a node on an implicit global tape (a monotonically
increasing creation index per node). ``backward`` collects the nodes
reachable from a scalar loss, replays them in reverse creation order, and
accumulates adjoints into ``Tensor.grad``. Repeated backward calls keep
accumulating until grads are zeroed explicitly.

``detach`` is the stop-gradient primitive: the returned tensor is
value-identical but carries no tape node, so no gradient ever flows from a
consumer of the detached value into its producers.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError, DimensionError, DomainError, UsageError

DTYPE = np.float64

_BCE_CLAMP = 1e-7
_LAYER_NORM_EPS = 1e-5

_node_ids = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation-only forwards)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Node:
    """One recorded operation: input tensors plus a backward rule.

    ``rule(g)`` maps the output adjoint to one adjoint per input (or None
    for inputs that need no gradient). Leaf parameters are nodes with no
    inputs and no rule.
    """

    __slots__ = ("id", "inputs", "rule")

    def __init__(self, inputs, rule):
        self.id = next(_node_ids)
        self.inputs = inputs
        self.rule = rule


class Tensor:
    __slots__ = ("data", "grad", "node")

    def __init__(self, data, node=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def tracked(self):
        return self.node is not None

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, tracked={self.tracked})"

    # operator sugar; all dispatch to the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def param(data):
    """Create a tracked leaf tensor (a trainable parameter)."""
    return Tensor(data, node=Node((), None))


def constant(data):
    """Create an untracked tensor (inputs, targets, masks)."""
    return Tensor(data)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, inputs, rule):
    if _grad_enabled and any(t.tracked for t in inputs):
        return Tensor(data, node=Node(tuple(inputs), rule))
    return Tensor(data)


def _sum_to_shape(g, shape):
    """Reduce a broadcast gradient back to the shape of its source."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# core ops


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}"
        )
    out = a.data @ b.data

    def rule(g):
        ga = _sum_to_shape(g @ b.data.swapaxes(-1, -2), a.data.shape)
        gb = _sum_to_shape(a.data.swapaxes(-1, -2) @ g, b.data.shape)
        return ga, gb

    return _make(out, (a, b), rule)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def rule(g):
        return _sum_to_shape(g, a.data.shape), _sum_to_shape(g, b.data.shape)

    return _make(out, (a, b), rule)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def rule(g):
        return _sum_to_shape(g, a.data.shape), _sum_to_shape(-g, b.data.shape)

    return _make(out, (a, b), rule)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def rule(g):
        return (
            _sum_to_shape(g * b.data, a.data.shape),
            _sum_to_shape(g * a.data, b.data.shape),
        )

    return _make(out, (a, b), rule)


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def square(a):
    return mul(a, a)


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), rule)


def slice_last(a, index):
    """Take element ``index`` of the last axis, keeping the axis (size 1)."""
    a = as_tensor(a)
    out = a.data[..., index : index + 1]

    def rule(g):
        ga = np.zeros_like(a.data)
        ga[..., index : index + 1] = g
        return (ga,)

    return _make(out, (a,), rule)


# ---------------------------------------------------------------------------
# nonlinearities and normalization


def softmax(x, temperature=1.0, axis=-1):
    if temperature <= 0:
        raise ConfigError(f"softmax temperature must be positive, got {temperature}")
    x = as_tensor(x)
    z = x.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - inner) / temperature,)

    return _make(s, (x,), rule)


def gelu(x):
    """Exact-CDF GELU: x * Phi(x) with Phi the standard normal CDF."""
    x = as_tensor(x)
    cdf = ndtr(x.data)
    out = x.data * cdf

    def rule(g):
        pdf = np.exp(-0.5 * x.data * x.data) / np.sqrt(2.0 * np.pi)
        return (g * (cdf + x.data * pdf),)

    return _make(out, (x,), rule)


def sigmoid(x):
    x = as_tensor(x)
    s = np.empty_like(x.data)
    pos = x.data >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    s[~pos] = ex / (1.0 + ex)

    def rule(g):
        return (g * s * (1.0 - s),)

    return _make(s, (x,), rule)


def layer_norm(x, gain, bias):
    """Normalize the last axis to mean 0 / variance 1, then apply affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.data.shape[-1]
    if d < 2:
        raise ConfigError(f"layer_norm needs a last axis of at least 2, got {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LAYER_NORM_EPS)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def rule(g):
        gxhat = g * gain.data
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        ggain = _sum_to_shape(g * xhat, gain.data.shape)
        gbias = _sum_to_shape(g, bias.data.shape)
        return gx, ggain, gbias

    return _make(out, (x, gain, bias), rule)


# ---------------------------------------------------------------------------
# reductions and losses


def sum_all(a):
    a = as_tensor(a)
    return _make(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, a.data.shape),))


def mean_all(a):
    a = as_tensor(a)
    n = a.data.size

    def rule(g):
        return (np.broadcast_to(g / n, a.data.shape),)

    return _make(a.data.mean(), (a,), rule)


def mse(a, b):
    a, b = as_tensor(a), as_tensor(b)
    diff = a.data - b.data
    n = diff.size

    def rule(g):
        d = g * 2.0 * diff / n
        return _sum_to_shape(d, a.data.shape), _sum_to_shape(-d, b.data.shape)

    return _make(np.mean(diff * diff), (a, b), rule)


def bce(pred, target):
    """Mean binary cross-entropy; probabilities clamped before the log."""
    pred, target = as_tensor(pred), as_tensor(target)
    if np.any(pred.data < 0.0) or np.any(pred.data > 1.0):
        raise DomainError("bce: predicted probabilities must lie in [0, 1]")
    p = np.clip(pred.data, _BCE_CLAMP, 1.0 - _BCE_CLAMP)
    t = target.data
    out = -np.mean(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))
    n = p.size
    live = (pred.data > _BCE_CLAMP) & (pred.data < 1.0 - _BCE_CLAMP)

    def rule(g):
        gp = g * live * (p - t) / (p * (1.0 - p)) / n
        gt = g * (np.log(1.0 - p) - np.log(p)) / n
        return _sum_to_shape(gp, pred.data.shape), _sum_to_shape(gt, target.data.shape)

    return _make(out, (pred, target), rule)


def detach(x):
    """Value-identical tensor with no tape linkage (stop-gradient)."""
    x = as_tensor(x)
    return Tensor(x.data.copy())


# ---------------------------------------------------------------------------
# the tape and the backward pass


class Tape:
    """The recorded operations reachable from one output, in creation order."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def trace(cls, root):
        seen = set()
        nodes = []
        stack = [root]
        while stack:
            t = stack.pop()
            node = t.node
            if node is None or node.id in seen:
                continue
            seen.add(node.id)
            nodes.append((node, t))
            stack.extend(node.inputs)
        nodes.sort(key=lambda pair: pair[0].id)
        return cls(nodes)

    def tensors(self):
        return [t for _, t in self.nodes]


def backward(loss):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked ancestor."""
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.tracked:
        return
    tape = Tape.trace(loss)
    adjoint = {loss.node.id: np.ones_like(loss.data)}
    for node, out in reversed(tape.nodes):
        g = adjoint.pop(node.id, None)
        if g is None:
            continue
        if node.rule is None:
            _deposit(out, g)
            continue
        grads = node.rule(g)
        for inp, gi in zip(node.inputs, grads):
            if gi is None or not inp.tracked:
                continue
            prev = adjoint.get(inp.node.id)
            adjoint[inp.node.id] = gi if prev is None else prev + gi


def _deposit(tensor, g):
    if tensor.grad is None:
        tensor.grad = np.array(g, dtype=DTYPE, copy=True)
        tensor.grad = tensor.grad.reshape(tensor.data.shape)
    else:
        tensor.grad += g.reshape(tensor.data.shape)
