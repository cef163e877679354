"""Dense-tensor computation graph with reverse-mode automatic differentiation.

Values are float64 numpy arrays. Building an expression out of `Node`s
records the graph; `backward` on a scalar root fills every reachable
node's `.grad` with d(root)/d(node). Broadcasting is restricted to
scalar-vs-tensor on purpose: anything fancier at these sizes tends to
hide shape bugs (expand a bias with a ones-matmul instead).
"""

from __future__ import annotations

import json
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Node",
    "ShapeError",
    "constant",
    "parameter",
    "add",
    "mul",
    "matmul",
    "neg",
    "tanh",
    "relu",
    "softplus",
    "exp",
    "log",
    "sin",
    "cos",
    "tan",
    "atan",
    "square",
    "reciprocal",
    "sum",
    "mean",
    "take_slice",
    "concat",
    "detach",
    "forward_op",
    "backward",
    "sgd_step",
    "zero_grads",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_VERSION",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""

    def __init__(self, op: str, *shapes: tuple):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' and '.join(str(s) for s in shapes)}")


class Node:
    """One value in the computation graph, with a slot for its gradient.

    `parents` and `_vjp` are filled by the op that produced the node;
    leaves (constants, parameters) have neither.
    """

    __slots__ = ("value", "grad", "parents", "_vjp")

    def __init__(self, value, parents: tuple = (), vjp: Callable | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.parents = parents
        self._vjp = vjp

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(shape={self.value.shape}, leaf={self._vjp is None})"

    # Operator sugar; scalars are lifted to constant nodes.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return mul(self, reciprocal(_lift(other)))

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __neg__(self):
        return neg(self)


def constant(value) -> Node:
    """Leaf node that takes no gradient updates (grad is still computed)."""
    return Node(value)


def parameter(value) -> Node:
    """Leaf node intended to be trained; alias of `constant` kept for intent."""
    return Node(value)


def _lift(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _is_scalar(shape: tuple) -> bool:
    return int(np.prod(shape, dtype=np.int64)) == 1


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    # Undo scalar broadcast: a scalar operand collects the sum of the
    # full output gradient.
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def _elementwise_shapes(op: str, a: Node, b: Node) -> None:
    if a.shape == b.shape or _is_scalar(a.shape) or _is_scalar(b.shape):
        return
    raise ShapeError(op, a.shape, b.shape)


def add(a: Node, b: Node) -> Node:
    _elementwise_shapes("add", a, b)
    out = Node(a.value + b.value, (a, b))
    out._vjp = lambda g: (_reduce_to(g, a.value.shape), _reduce_to(g, b.value.shape))
    return out


def mul(a: Node, b: Node) -> Node:
    _elementwise_shapes("mul", a, b)
    out = Node(a.value * b.value, (a, b))
    out._vjp = lambda g: (
        _reduce_to(g * b.value, a.value.shape),
        _reduce_to(g * a.value, b.value.shape),
    )
    return out


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError("matmul", a.value.shape, b.value.shape)
    out = Node(a.value @ b.value, (a, b))
    out._vjp = lambda g: (g @ b.value.T, a.value.T @ g)
    return out


def neg(a: Node) -> Node:
    out = Node(-a.value, (a,))
    out._vjp = lambda g: (-g,)
    return out


def tanh(a: Node) -> Node:
    y = np.tanh(a.value)
    out = Node(y, (a,))
    out._vjp = lambda g: (g * (1.0 - y * y),)
    return out


def relu(a: Node) -> Node:
    y = np.maximum(a.value, 0.0)
    out = Node(y, (a,))
    out._vjp = lambda g: (g * (a.value > 0.0),)
    return out


def softplus(a: Node) -> Node:
    # log(1 + exp(x)) computed stably for large |x|.
    y = np.logaddexp(0.0, a.value)
    out = Node(y, (a,))
    sig = np.exp(a.value - y)  # sigmoid via exp(x - softplus(x)), no overflow
    out._vjp = lambda g: (g * sig,)
    return out


def exp(a: Node) -> Node:
    y = np.exp(a.value)
    out = Node(y, (a,))
    out._vjp = lambda g: (g * y,)
    return out


def log(a: Node) -> Node:
    out = Node(np.log(a.value), (a,))
    out._vjp = lambda g: (g / a.value,)
    return out


def sin(a: Node) -> Node:
    out = Node(np.sin(a.value), (a,))
    out._vjp = lambda g: (g * np.cos(a.value),)
    return out


def cos(a: Node) -> Node:
    out = Node(np.cos(a.value), (a,))
    out._vjp = lambda g: (-g * np.sin(a.value),)
    return out


def tan(a: Node) -> Node:
    y = np.tan(a.value)
    out = Node(y, (a,))
    out._vjp = lambda g: (g * (1.0 + y * y),)
    return out


def atan(a: Node) -> Node:
    out = Node(np.arctan(a.value), (a,))
    out._vjp = lambda g: (g / (1.0 + a.value * a.value),)
    return out


def square(a: Node) -> Node:
    out = Node(a.value * a.value, (a,))
    out._vjp = lambda g: (g * 2.0 * a.value,)
    return out


def reciprocal(a: Node) -> Node:
    y = 1.0 / a.value
    out = Node(y, (a,))
    out._vjp = lambda g: (-g * y * y,)
    return out


def sum(a: Node) -> Node:  # noqa: A001 - op name mirrors the graph kind
    out = Node(np.sum(a.value), (a,))
    out._vjp = lambda g: (np.full_like(a.value, float(g)),)
    return out


def mean(a: Node) -> Node:
    n = a.value.size
    out = Node(np.sum(a.value) / n, (a,))
    out._vjp = lambda g: (np.full_like(a.value, float(g) / n),)
    return out


def take_slice(a: Node, start: int, stop: int, axis: int = 1) -> Node:
    """Contiguous slice along one axis (the graph's `slice` kind)."""
    nd = a.value.ndim
    if axis >= nd or stop > a.value.shape[axis] or start < 0 or start >= stop:
        raise ShapeError("slice", a.value.shape, (start, stop, axis))
    index = tuple(slice(start, stop) if d == axis else slice(None) for d in range(nd))
    out = Node(a.value[index], (a,))

    def vjp(g):
        full = np.zeros_like(a.value)
        full[index] = g
        return (full,)

    out._vjp = vjp
    return out


def concat(nodes: Sequence[Node], axis: int = 1) -> Node:
    if not nodes:
        raise ShapeError("concat", ())
    for n in nodes[1:]:
        if n.value.ndim != nodes[0].value.ndim:
            raise ShapeError("concat", nodes[0].value.shape, n.value.shape)
    out = Node(np.concatenate([n.value for n in nodes], axis=axis), tuple(nodes))
    sizes = [n.value.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    out._vjp = vjp
    return out


def detach(a: Node) -> Node:
    """Copy of `a`'s value with no graph history (stop-gradient)."""
    return Node(a.value.copy())


_OPS: dict[str, Callable] = {
    "add": add,
    "mul": mul,
    "matmul": matmul,
    "neg": neg,
    "tanh": tanh,
    "relu": relu,
    "softplus": softplus,
    "exp": exp,
    "log": log,
    "sin": sin,
    "cos": cos,
    "tan": tan,
    "atan": atan,
    "square": square,
    "reciprocal": reciprocal,
    "sum": sum,
    "mean": mean,
    "slice": take_slice,
    "concat": concat,
}


def forward_op(kind: str, inputs: Sequence[Node], **kwargs) -> Node:
    """Apply an operation by kind name.

    `concat` receives the input list as one argument; every other kind is
    called with the inputs unpacked.
    """
    if kind not in _OPS:
        raise ValueError(f"unknown op kind: {kind!r}")
    if kind == "concat":
        return concat(list(inputs), **kwargs)
    return _OPS[kind](*inputs, **kwargs)


def _topo_order(root: Node) -> list[Node]:
    # Iterative post-order DFS; rollout graphs get deep enough that
    # recursion would be a liability.
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    """Accumulate d(root)/d(node) into `.grad` of every node reachable from root.

    Gradients add up across calls and across multiple uses of a node;
    zero them (or use `sgd_step`) between training steps.
    """
    if root.value.size != 1:
        raise ShapeError("backward", root.value.shape)
    order = _topo_order(root)
    root.grad = root.grad + np.ones_like(root.value)
    for node in reversed(order):
        if node._vjp is None:
            continue
        parent_grads = node._vjp(node.grad)
        for p, g in zip(node.parents, parent_grads):
            p.grad = p.grad + g


def zero_grads(nodes: Iterable[Node]) -> None:
    for n in nodes:
        n.grad = np.zeros_like(n.value)


def sgd_step(params: Iterable[Node], learning_rate: float) -> None:
    """Plain gradient descent: value -= lr * grad, then zero the grads."""
    for p in params:
        p.value = p.value - learning_rate * p.grad
        p.grad = np.zeros_like(p.value)


CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: dict[str, Node]) -> None:
    """Write named parameters as a flat, versioned JSON container.

    Keys are sorted and floats use shortest round-trip repr, so
    save -> load -> save is byte-stable.
    """
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "params": {
            name: {"shape": list(node.value.shape), "data": node.value.ravel().tolist()}
            for name, node in params.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back as name -> float64 array."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {doc.get('format_version')!r}")
    out = {}
    for name, entry in doc["params"].items():
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        out[name] = arr
    return out
