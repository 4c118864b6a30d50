"""Scalar-output reverse-mode automatic differentiation.

A :class:`Tape` records a straight-line program as an ordered list of
nodes. Every node value is computed eagerly when recorded, so a tape is
also a complete forward evaluation. :func:`reverse_grad` runs a single
backward sweep from the output node and accumulates adjoints into the
parents of each visited node.

Values are numpy arrays (0-d for scalars). Elementwise binary primitives
follow numpy broadcasting; the backward rule sums the adjoint back down to
the parent's shape.

Example
-------
>>> tape = Tape()
>>> x = tape.input(3.0)
>>> y = x * x
>>> reverse_grad(tape, output=y.index)
array([6.])
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import scipy.sparse as sp

PRIMITIVES = (
    "input", "constant", "add", "sub", "mul", "div", "neg", "exp", "log",
    "sin", "cos", "tanh", "power", "sum", "dot", "matvec", "gather",
    "scatter-add",
)

_UNARY = {"neg", "exp", "log", "sin", "cos", "tanh", "power", "sum"}
_BINARY = {"add", "sub", "mul", "div", "dot"}


class TapeError(ValueError):
    """Invalid recording request or gradient query."""


@dataclass
class Node:
    op_kind: str
    parent_ids: tuple[int, ...]
    value: np.ndarray
    payload: Any = None


@dataclass
class Tape:
    nodes: list[Node] = field(default_factory=list)
    input_count: int = 0
    output_id: int | None = None
    last_edge_visits: int = 0

    def __len__(self):
        return len(self.nodes)

    def input(self, value) -> "Var":
        if len(self.nodes) != self.input_count:
            raise TapeError("inputs must be recorded before any other node")
        self.nodes.append(Node("input", (), np.array(value, dtype=float)))
        self.input_count += 1
        return Var(self, len(self.nodes) - 1)

    def constant(self, value) -> "Var":
        return Var(self, record(self, "constant", (), payload=value))

    def value(self, index: int) -> np.ndarray:
        return self.nodes[index].value


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _forward(op: str, vals: list[np.ndarray], payload) -> np.ndarray:
    if op == "constant":
        if sp.issparse(payload):
            raise TapeError("constant nodes hold dense values")
        return np.array(payload, dtype=float)
    if op in _BINARY:
        a, b = vals
        if op == "dot":
            if a.ndim != 1 or a.shape != b.shape:
                raise TapeError(f"dot needs equal-length vectors, got {a.shape} and {b.shape}")
            return np.array(a @ b)
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError as exc:
            raise TapeError(f"shape mismatch in {op}: {a.shape} vs {b.shape}") from exc
        if op == "add":
            return a + b
        if op == "sub":
            return a - b
        if op == "mul":
            return a * b
        return a / b
    if op in _UNARY:
        (a,) = vals
        if op == "neg":
            return -a
        if op == "exp":
            return np.exp(a)
        if op == "log":
            if np.any(a <= 0):
                raise TapeError("log of a nonpositive value")
            return np.log(a)
        if op == "sin":
            return np.sin(a)
        if op == "cos":
            return np.cos(a)
        if op == "tanh":
            return np.tanh(a)
        if op == "power":
            p = float(payload)
            if not float(p).is_integer() and np.any(a <= 0):
                raise TapeError("power with non-integer exponent needs a positive base")
            return a ** p
        return np.array(a.sum())
    if op == "matvec":
        if len(vals) == 2:
            A, x = vals
        else:
            A, (x,) = payload, vals
        if A.ndim != 2 or A.shape[1] != x.shape[0]:
            raise TapeError(f"matvec shape mismatch: {A.shape} @ {x.shape}")
        return np.asarray(A @ x, dtype=float)
    if op == "gather":
        (x,) = vals
        idx = np.asarray(payload)
        if idx.size and (idx.max() >= x.size or idx.min() < 0):
            raise TapeError("gather index out of range")
        return x.ravel()[idx]
    if op == "scatter-add":
        (x,) = vals
        idx, size = payload
        idx = np.asarray(idx)
        if idx.shape != x.shape:
            raise TapeError("scatter-add index shape must match the source")
        out = np.zeros(size)
        np.add.at(out, idx.ravel(), x.ravel())
        return out
    raise TapeError(f"unknown primitive {op!r}")


def record(tape: Tape, op: str, parents: Sequence[int], payload=None) -> int:
    """Append a node and evaluate it. Returns the new node index."""
    if op not in PRIMITIVES or op == "input":
        raise TapeError(f"unknown primitive {op!r}")
    parents = tuple(int(p) for p in parents)
    n = len(tape.nodes)
    if any(p < 0 or p >= n for p in parents):
        raise TapeError("parents must already be on the tape")
    expected = {"constant": (0,), "matvec": (1, 2), "gather": (1,), "scatter-add": (1,)}
    if op in _BINARY:
        arity = (2,)
    elif op in _UNARY:
        arity = (1,)
    else:
        arity = expected[op]
    if len(parents) not in arity:
        raise TapeError(f"{op} takes {arity} parents, got {len(parents)}")
    if op == "matvec" and len(parents) == 1 and payload is None:
        raise TapeError("matvec with one parent needs a constant matrix payload")
    vals = [tape.nodes[p].value for p in parents]
    value = _forward(op, vals, payload)
    tape.nodes.append(Node(op, parents, value, payload))
    return n


def _local_vjp(node: Node, g: np.ndarray, vals: list[np.ndarray]) -> list[np.ndarray]:
    op, y = node.op_kind, node.value
    if op == "add":
        return [_unbroadcast(g, vals[0].shape), _unbroadcast(g, vals[1].shape)]
    if op == "sub":
        return [_unbroadcast(g, vals[0].shape), _unbroadcast(-g, vals[1].shape)]
    if op == "mul":
        a, b = vals
        return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]
    if op == "div":
        a, b = vals
        return [_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)]
    if op == "dot":
        a, b = vals
        return [g * b, g * a]
    if op == "neg":
        return [-g]
    if op == "exp":
        return [g * y]
    if op == "log":
        return [g / vals[0]]
    if op == "sin":
        return [g * np.cos(vals[0])]
    if op == "cos":
        return [-g * np.sin(vals[0])]
    if op == "tanh":
        return [g * (1.0 - y * y)]
    if op == "power":
        p = float(node.payload)
        return [g * p * vals[0] ** (p - 1.0)]
    if op == "sum":
        return [np.broadcast_to(g, vals[0].shape).copy()]
    if op == "matvec":
        if len(vals) == 2:
            A, x = vals
            gA = np.outer(g, x) if x.ndim == 1 else g @ x.T
            return [gA, A.T @ g]
        A = node.payload
        return [np.asarray(A.T @ g, dtype=float)]
    if op == "gather":
        out = np.zeros(vals[0].size)
        np.add.at(out, np.asarray(node.payload).ravel(), np.ravel(g))
        return [out.reshape(vals[0].shape)]
    if op == "scatter-add":
        idx = np.asarray(node.payload[0])
        return [g[idx]]
    raise TapeError(f"no derivative rule for {op!r}")


def reverse_grad(tape: Tape, wrt: Sequence[int] | None = None, output: int | None = None) -> np.ndarray:
    """Gradient of a scalar output node with respect to tape inputs.

    Parameters
    ----------
    wrt : input node indices; defaults to all inputs in order.
    output : output node; defaults to ``tape.output_id`` or the last node.

    Returns the flattened gradients of the requested inputs, concatenated.
    ``tape.last_edge_visits`` holds the number of edges traversed.
    """
    if output is None:
        output = tape.output_id if tape.output_id is not None else len(tape.nodes) - 1
    if output < 0 or output >= len(tape.nodes):
        raise TapeError("output node not on tape")
    if tape.nodes[output].value.size != 1:
        raise TapeError("reverse_grad needs a scalar output")
    if wrt is None:
        wrt = range(tape.input_count)
    wrt = list(wrt)
    for i in wrt:
        if not 0 <= i < tape.input_count:
            raise TapeError(f"node {i} is not an input")

    nodes = tape.nodes
    reachable = np.zeros(output + 1, dtype=bool)
    reachable[output] = True
    for i in range(output, -1, -1):
        if reachable[i]:
            for p in nodes[i].parent_ids:
                reachable[p] = True

    adj: dict[int, np.ndarray] = {output: np.ones_like(nodes[output].value)}
    visits = 0
    for i in range(output, tape.input_count - 1, -1):
        node = nodes[i]
        if not reachable[i] or not node.parent_ids:
            continue
        g = adj.pop(i, None)
        if g is None:
            g = np.zeros_like(node.value)
        vals = [nodes[p].value for p in node.parent_ids]
        for p, gp in zip(node.parent_ids, _local_vjp(node, g, vals)):
            visits += 1
            gp = np.asarray(gp, dtype=float).reshape(nodes[p].value.shape)
            if p in adj:
                adj[p] = adj[p] + gp
            else:
                adj[p] = gp
    tape.last_edge_visits = visits
    out = [np.ravel(adj.get(i, np.zeros_like(nodes[i].value))) for i in wrt]
    return np.concatenate(out) if out else np.zeros(0)


def count_reachable_edges(tape: Tape, output: int | None = None) -> int:
    if output is None:
        output = tape.output_id if tape.output_id is not None else len(tape.nodes) - 1
    seen = {output}
    stack = [output]
    edges = 0
    while stack:
        i = stack.pop()
        for p in tape.nodes[i].parent_ids:
            edges += 1
            if p not in seen:
                seen.add(p)
                stack.append(p)
    return edges


class Var:
    """Handle to a tape node with operator overloading."""

    __slots__ = ("tape", "index")
    __array_priority__ = 100

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return self.value.shape

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise TapeError("operands live on different tapes")
            return other
        return self.tape.constant(other)

    def _op(self, op, *others, payload=None) -> "Var":
        parents = [self.index] + [self._lift(o).index for o in others]
        return Var(self.tape, record(self.tape, op, parents, payload))

    def __add__(self, o):
        return self._op("add", o)

    def __radd__(self, o):
        return self._lift(o)._op("add", self)

    def __sub__(self, o):
        return self._op("sub", o)

    def __rsub__(self, o):
        return self._lift(o)._op("sub", self)

    def __mul__(self, o):
        return self._op("mul", o)

    def __rmul__(self, o):
        return self._lift(o)._op("mul", self)

    def __truediv__(self, o):
        return self._op("div", o)

    def __rtruediv__(self, o):
        return self._lift(o)._op("div", self)

    def __neg__(self):
        return self._op("neg")

    def __pow__(self, p):
        return self._op("power", payload=float(p))

    def __getitem__(self, idx):
        flat = np.arange(self.value.size).reshape(self.shape)[idx]
        return self._op("gather", payload=flat)

    def sum(self):
        return self._op("sum")


def _unary(op):
    def f(x: Var) -> Var:
        return x._op(op)
    f.__name__ = op
    return f


exp = _unary("exp")
log = _unary("log")
sin = _unary("sin")
cos = _unary("cos")
tanh = _unary("tanh")


def dot(a: Var, b) -> Var:
    return a._op("dot", b)


def matvec(A, x: Var) -> Var:
    """``A @ x`` where ``A`` is a Var or a constant dense/sparse matrix."""
    if isinstance(A, Var):
        return A._op("matvec", x)
    return Var(x.tape, record(x.tape, "matvec", [x.index], payload=A))


def gather(x: Var, idx) -> Var:
    return x._op("gather", payload=np.asarray(idx, dtype=np.intp))


def scatter_add(x: Var, idx, size: int) -> Var:
    return x._op("scatter-add", payload=(np.asarray(idx, dtype=np.intp), int(size)))
