"""Minimal dense-tensor arithmetic with reverse-mode gradient propagation.

Values are 64-bit, row-major numpy arrays. A ``Node`` wraps one value with a
same-shaped gradient buffer and references to the nodes that produced it.
Forward functions build the graph; ``backward`` walks it once per call and
adds exactly one gradient contribution into every reachable buffer, so
repeated calls accumulate.

A graph is confined to one thread from forward through backward; values are
never mutated by any op (parallelism happens across independent graphs).
"""

import numpy as np

from . import _kernels as K


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class MaskError(ValueError):
    """A softmax mask row has no selectable entry."""


class ContractError(ValueError):
    """An op-level contract (e.g. scalar backward root) is violated."""


def tensor(data):
    """Row-major float64 array from arbitrary array-like input."""
    return np.ascontiguousarray(data, dtype=np.float64)


class Node:
    """One vertex of the computation graph.

    value and grad always share a shape; parents are the producing inputs and
    op is a short tag for debugging. Leaves have no parents.
    """

    __slots__ = ("value", "grad", "parents", "op", "_backward")

    def __init__(self, value, parents=(), op="leaf"):
        self.value = value
        self.grad = np.zeros_like(value)
        self.parents = tuple(parents)
        self.op = op
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"


def leaf(data, op="leaf"):
    return Node(tensor(data), op=op)


def _unary(value, x, op, bwd):
    out = Node(value, (x,), op)
    out._backward = bwd
    return out


def backward(root):
    """Populate grad buffers with d(root)/d(node) for every reachable node.

    root must be scalar-valued. Gradients are computed fresh per call and
    added into the persistent buffers, so two calls double them.
    """
    if root.value.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {root.value.shape}")

    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))

    pending = {id(root): np.ones_like(root.value)}
    for node in reversed(topo):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad += g
        if node._backward is None:
            continue
        for parent, contrib in zip(node.parents, node._backward(g)):
            if contrib is None:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + contrib
            else:
                pending[key] = contrib


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


def matmul(a, b):
    """Matrix product of a (M,K) and b (K,P)."""
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul shapes do not chain: {a.value.shape} x {b.value.shape}")
    av, bv = a.value, b.value
    out = Node(av @ bv, (a, b), "matmul")
    out._backward = lambda g: (g @ bv.T, av.T @ g)
    return out


def add(a, b):
    """Elementwise sum; shapes must match exactly (no broadcasting)."""
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add shapes differ: {a.value.shape} vs {b.value.shape}")
    out = Node(a.value + b.value, (a, b), "add")
    out._backward = lambda g: (g, g)
    return out


def add_bias(x, b):
    """Add a length-C vector to every row of a (..., C) tensor."""
    if b.value.ndim != 1 or x.value.shape[-1] != b.value.shape[0]:
        raise ShapeError(f"add_bias shapes do not align: {x.value.shape} + {b.value.shape}")
    out = Node(x.value + b.value, (x, b), "add_bias")
    axes = tuple(range(x.value.ndim - 1))
    out._backward = lambda g: (g, g.sum(axis=axes))
    return out


def scale(x, c):
    """Multiply by a python scalar constant."""
    c = float(c)
    return _unary(x.value * c, x, "scale", lambda g: (g * c,))


def relu(x):
    """Elementwise max(0, x); gradient at exactly 0 is defined as 0."""
    xv = x.value
    return _unary(np.maximum(xv, 0.0), x, "relu", lambda g: (np.where(xv > 0.0, g, 0.0),))


def reshape(x, shape):
    """Row-major reinterpretation to a new shape of equal size."""
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.value.size:
        raise ShapeError(f"cannot reshape {x.value.shape} to {shape}")
    old = x.value.shape
    value = np.ascontiguousarray(x.value.reshape(shape))
    return _unary(value, x, "reshape", lambda g: (g.reshape(old),))


def concat(xs, axis):
    """Concatenate nodes along one axis."""
    xs = list(xs)
    if not xs:
        raise ShapeError("concat needs at least one input")
    value = np.concatenate([x.value for x in xs], axis=axis)
    sizes = [x.value.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    out = Node(value, xs, "concat")
    out._backward = lambda g: tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))
    return out


def mean_pool(x, axis):
    """Mean over one axis."""
    axis = int(axis)
    n = x.value.shape[axis]
    value = x.value.mean(axis=axis)
    return _unary(value, x, "mean_pool", lambda g: (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),))


def masked_softmax(logits, mask):
    """Row-wise softmax over mask-true entries of a (M, N) node.

    Masked-false entries are exactly 0 in the output and receive exactly zero
    gradient. Every mask row needs at least one true entry.
    """
    if logits.value.ndim != 2:
        raise ShapeError(f"masked_softmax expects a 2-d input, got {logits.value.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.value.shape:
        raise ShapeError(f"mask shape {mask.shape} != logits shape {logits.value.shape}")
    if not mask.any(axis=1).all():
        raise MaskError("masked_softmax: some mask row selects nothing")
    mask8 = mask.astype(np.uint8)
    probs = K.masked_softmax_fwd(logits.value, mask8)
    return _unary(probs, logits, "masked_softmax", lambda g: (K.masked_softmax_bwd(probs, mask8, g),))


def sum_all(x):
    """Sum of all entries, as a scalar node."""
    shape = x.value.shape
    return _unary(np.asarray(x.value.sum()), x, "sum", lambda g: (np.broadcast_to(g, shape).copy(),))


def cross_entropy_with_logits(logits, labels, class_weights=None):
    """Mean 2-class cross-entropy over a (B, 2) logit node.

    labels holds ints in {0, 1}; class_weights optionally reweights each
    example by the weight of its true class. Returns a scalar node.
    """
    lv = logits.value
    if lv.ndim != 2 or lv.shape[1] != 2:
        raise ShapeError(f"cross_entropy expects (B, 2) logits, got {lv.shape}")
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (lv.shape[0],):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {lv.shape[0]}")
    if labels.min() < 0 or labels.max() > 1:
        raise ContractError("labels must be 0 (spoof) or 1 (bonafide)")
    w = np.ones(2) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    if w.shape != (2,):
        raise ShapeError("class_weights must be a pair")

    b = lv.shape[0]
    m = lv.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(lv - m).sum(axis=1))
    nll = lse - lv[np.arange(b), labels]
    wi = w[labels]
    value = np.asarray((wi * nll).sum() / b)

    def bwd(g):
        probs = np.exp(lv - lse[:, None])
        probs[np.arange(b), labels] -= 1.0
        return (probs * (g * wi / b)[:, None],)

    return _unary(value, logits, "cross_entropy", bwd)
