"""Define-by-run reverse-mode differentiation.

Every differentiable operation calls :func:`record`, which wraps the forward
result in a :class:`Node` holding references to its parents and a closure that
maps the upstream gradient to one gradient per parent. :func:`backward` sorts
the graph reachable from a scalar loss into a :class:`Tape` and walks it in
reverse. Leaf gradients accumulate until :func:`zero_grad` clears them.
"""

from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import Tensor

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_grad_enabled = contextvars.ContextVar("grad_enabled", default=True)


@contextlib.contextmanager
def no_grad():
    """Record nothing inside the block: results are detached constants."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "op", "stochastic", "name")

    def __init__(
        self,
        value: Tensor,
        parents: Sequence["Node"] = (),
        backward_fn: BackwardFn | None = None,
        requires_grad: bool = False,
        op: str = "leaf",
        stochastic: bool = False,
        name: str | None = None,
    ):
        if not isinstance(value, Tensor):
            value = Tensor(value)
        self.value = value
        self.grad: Tensor | None = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.op = op
        self.stochastic = stochastic
        self.name = name

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def array(self) -> np.ndarray:
        return self.value.array

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.value.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match value shape {self.value.shape}")
        if self.grad is None:
            self.grad = Tensor.wrap(np.array(g, dtype=self.value.dtype, copy=True))
        else:
            self.grad.array += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = self.name or self.op
        return f"Node({label}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def leaf(values, dtype=np.float32, requires_grad: bool = True, name: str | None = None) -> Node:
    value = values if isinstance(values, Tensor) else Tensor(values, dtype=dtype)
    return Node(value, requires_grad=requires_grad, name=name)


def constant(values, dtype=np.float32) -> Node:
    return leaf(values, dtype=dtype, requires_grad=False)


def record(
    op: str,
    inputs: Sequence[Node],
    value: Tensor | np.ndarray,
    backward_fn: BackwardFn,
    stochastic: bool = False,
) -> Node:
    """Create the node produced by ``op`` applied to ``inputs``."""
    assert all(isinstance(p, Node) for p in inputs), "record() inputs must be Nodes"
    if not isinstance(value, Tensor):
        value = Tensor.wrap(value)
    stochastic = stochastic or any(p.stochastic for p in inputs)
    if not _grad_enabled.get():
        return Node(value, op=op, stochastic=stochastic)
    requires_grad = any(p.requires_grad for p in inputs)
    return Node(
        value,
        parents=inputs,
        backward_fn=backward_fn if requires_grad else None,
        requires_grad=requires_grad,
        op=op,
        stochastic=stochastic,
    )


class Tape:
    """Nodes reachable from a root, parents always before children."""

    def __init__(self, nodes: Sequence[Node]):
        self.nodes = list(nodes)

    @classmethod
    def from_root(cls, root: Node) -> "Tape":
        order: list[Node] = []
        seen: set[int] = set()
        stack: list[tuple[Node, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node.parents):
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def leaves(self) -> list[Node]:
        return [n for n in self.nodes if n.is_leaf]


def backward(loss: Node) -> Tape:
    """Seed d(loss)/d(loss) = 1 and propagate gradients to every leaf.

    Leaf gradients are added to whatever is already stored on them.
    Intermediate gradients are released once they have been propagated.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = Tape.from_root(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.value.dtype)}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node), None)
        if g is None or not node.requires_grad:
            continue
        if node.is_leaf:
            node.accumulate(g)
            continue
        parent_grads = node.backward_fn(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
    return tape


def zero_grad(nodes: Iterable[Node]) -> None:
    for node in nodes:
        node.zero_grad()


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def add(a: Node, b: Node) -> Node:
    a, b = _as_node(a), _as_node(b)
    x, y = a.array, b.array
    if x.shape != y.shape and not (y.ndim == 1 and x.shape[-1:] == y.shape):
        raise ShapeError(f"cannot add shapes {x.shape} and {y.shape}")
    broadcast = x.shape != y.shape

    def backward_fn(g):
        return g, (g.reshape(-1, y.shape[0]).sum(axis=0) if broadcast else g)

    return record("add", (a, b), x + y, backward_fn)


def sub(a: Node, b: Node) -> Node:
    a, b = _as_node(a), _as_node(b)
    if a.shape != b.shape:
        raise ShapeError(f"cannot subtract shapes {a.shape} and {b.shape}")
    return record("sub", (a, b), a.array - b.array, lambda g: (g, -g))


def mul(a: Node, b: Node) -> Node:
    a, b = _as_node(a), _as_node(b)
    if a.shape != b.shape:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")
    x, y = a.array, b.array
    return record("mul", (a, b), x * y, lambda g: (g * y, g * x))


def matmul(a: Node, b: Node) -> Node:
    a, b = _as_node(a), _as_node(b)
    x, y = a.array, b.array
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {x.shape} x {y.shape}")
    return record("matmul", (a, b), x @ y, lambda g: (g @ y.T, x.T @ g))


def sum_all(a: Node) -> Node:
    x = a.array
    return record("sum", (a,), np.asarray(x.sum(), dtype=x.dtype), lambda g: (np.full(x.shape, g, dtype=x.dtype),))


def mean_all(a: Node) -> Node:
    x = a.array
    n = x.size
    return record(
        "mean", (a,), np.asarray(x.mean(), dtype=x.dtype), lambda g: (np.full(x.shape, g / n, dtype=x.dtype),)
    )


def reshape(a: Node, shape: Sequence[int]) -> Node:
    x = a.array
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    return record("reshape", (a,), x.reshape(shape).copy(), lambda g: (g.reshape(x.shape),))


def grad_check(f: Callable[[], Node], leaf_node: Node, h: float = 1e-5, indices=None) -> float:
    """Largest relative error between the analytic gradient and central differences.

    ``f`` must rebuild its graph from ``leaf_node`` on every call. The check is
    done in float64; ``indices`` restricts the comparison to a subset of flat
    coordinates. Graphs containing active dropout are rejected.
    """
    if leaf_node.value.dtype != np.float64:
        raise ContractError("grad_check requires a float64 leaf")
    leaf_node.zero_grad()
    leaf_node.requires_grad = True
    loss = f()
    if loss.stochastic:
        raise ContractError("grad_check requires a deterministic function (dropout must be off)")
    backward(loss)
    if leaf_node.grad is None:
        analytic = np.zeros(leaf_node.value.size)
    else:
        analytic = leaf_node.grad.array.reshape(-1).copy()
    leaf_node.zero_grad()

    flat = leaf_node.value.array.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    worst = 0.0
    for i in indices:
        original = flat[i]
        flat[i] = original + h
        up = f().value.array.item()
        flat[i] = original - h
        down = f().value.array.item()
        flat[i] = original
        numeric = (up - down) / (2.0 * h)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
