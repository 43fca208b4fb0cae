"""Reverse-mode automatic differentiation on an explicit, replayable tape.

Every operation appends a node recording its kind, inputs and cached value, so
a tape can be re-executed deterministically. ``backward`` can run in two modes:
plain (adjoints are numpy arrays) or graph (adjoints are emitted as new tape
nodes), which is what makes gradients of gradients available for unrolled
inner-loop updates.

All arithmetic is float64. The rectified-linear subgradient at 0 is 0.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Array dimensions do not match what an operation requires."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class NumericError(ValueError):
    """A non-finite value appeared where finite arithmetic is required."""


def _asarray(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Node:
    """One recorded operation: kind, input nodes, cached value, op metadata."""

    __slots__ = ("tape", "idx", "op", "inputs", "value", "meta")

    def __init__(self, tape, idx, op, inputs, value, meta):
        self.tape = tape
        self.idx = idx
        self.op = op
        self.inputs = inputs
        self.value = value
        self.meta = meta

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.idx}:{self.op}, shape={self.value.shape})"


def _fwd_leaf(vals, meta):
    raise AssertionError("leaf nodes are never recomputed")


def _fwd_add(vals, meta):
    return vals[0] + vals[1]


def _fwd_sub(vals, meta):
    return vals[0] - vals[1]


def _fwd_mul(vals, meta):
    return vals[0] * vals[1]


def _fwd_neg(vals, meta):
    return -vals[0]


def _fwd_scale(vals, meta):
    return vals[0] * meta


def _fwd_matmul(vals, meta):
    return vals[0] @ vals[1]


def _fwd_transpose(vals, meta):
    return vals[0].T


def _fwd_relu(vals, meta):
    return np.maximum(vals[0], 0.0)


def _fwd_sum(vals, meta):
    return np.asarray(vals[0].sum())


def _fwd_sum0(vals, meta):
    return vals[0].sum(axis=0)


def _fwd_mean(vals, meta):
    return np.asarray(vals[0].mean())


def _fwd_fill(vals, meta):
    shape, c = meta
    return np.full(shape, float(vals[0]) * c)


def _fwd_tile0(vals, meta):
    return np.broadcast_to(vals[0], (meta,) + vals[0].shape).copy()


def _fwd_reshape(vals, meta):
    return vals[0].reshape(meta)


def _fwd_slice1(vals, meta):
    start, stop = meta
    return vals[0][start:stop]


def _fwd_pad1(vals, meta):
    start, stop, n = meta
    out = np.zeros(n)
    out[start:stop] = vals[0]
    return out


def _stable_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _fwd_softmax(vals, meta):
    return _stable_softmax(vals[0])


def _fwd_log_softmax(vals, meta):
    z = vals[0]
    zs = z - z.max(axis=-1, keepdims=True)
    return zs - np.log(np.exp(zs).sum(axis=-1, keepdims=True))


def _fwd_take_rows(vals, meta):
    return vals[0][np.arange(vals[0].shape[0]), meta]


_FWD = {
    "leaf": _fwd_leaf,
    "add": _fwd_add,
    "sub": _fwd_sub,
    "mul": _fwd_mul,
    "neg": _fwd_neg,
    "scale": _fwd_scale,
    "matmul": _fwd_matmul,
    "transpose": _fwd_transpose,
    "relu": _fwd_relu,
    "sum": _fwd_sum,
    "sum0": _fwd_sum0,
    "mean": _fwd_mean,
    "fill": _fwd_fill,
    "tile0": _fwd_tile0,
    "reshape": _fwd_reshape,
    "slice1": _fwd_slice1,
    "pad1": _fwd_pad1,
    "softmax": _fwd_softmax,
    "log_softmax": _fwd_log_softmax,
    "take_rows": _fwd_take_rows,
}

# Ops whose VJP rules are themselves expressed as tape ops. Anything outside
# this set supports first-order gradients only.
_GRAPH_OK = {
    "leaf", "add", "sub", "mul", "neg", "scale", "matmul", "transpose",
    "relu", "sum", "sum0", "mean", "fill", "tile0", "reshape", "slice1",
    "pad1",
}


class Tape:
    """Ordered record of operations. Nodes are immutable after emission."""

    def __init__(self):
        self.nodes: list[Node] = []

    def _emit(self, op, inputs, value, meta=None) -> Node:
        node = Node(self, len(self.nodes), op, tuple(inputs), value, meta)
        self.nodes.append(node)
        return node

    def leaf(self, value) -> Node:
        return self._emit("leaf", (), _asarray(value))

    def _coerce(self, x) -> Node:
        return x if isinstance(x, Node) else self.leaf(x)

    # -- op builders ------------------------------------------------------

    def add(self, a, b) -> Node:
        a, b = self._coerce(a), self._coerce(b)
        if a.value.shape != b.value.shape and not (
            a.value.ndim == 2 and b.value.ndim == 1 and a.value.shape[1] == b.value.shape[0]
        ):
            raise ShapeError(f"add: {a.value.shape} vs {b.value.shape}")
        return self._emit("add", (a, b), _fwd_add((a.value, b.value), None))

    def sub(self, a, b) -> Node:
        a, b = self._coerce(a), self._coerce(b)
        if a.value.shape != b.value.shape and not (
            a.value.ndim == 2 and b.value.ndim == 1 and a.value.shape[1] == b.value.shape[0]
        ):
            raise ShapeError(f"sub: {a.value.shape} vs {b.value.shape}")
        return self._emit("sub", (a, b), _fwd_sub((a.value, b.value), None))

    def mul(self, a, b) -> Node:
        a, b = self._coerce(a), self._coerce(b)
        if a.value.shape != b.value.shape and a.value.ndim != 0 and b.value.ndim != 0:
            raise ShapeError(f"mul: {a.value.shape} vs {b.value.shape}")
        return self._emit("mul", (a, b), _fwd_mul((a.value, b.value), None))

    def neg(self, a) -> Node:
        a = self._coerce(a)
        return self._emit("neg", (a,), -a.value)

    def scale(self, a, c: float) -> Node:
        a = self._coerce(a)
        c = float(c)
        return self._emit("scale", (a,), a.value * c, c)

    def matmul(self, a, b) -> Node:
        a, b = self._coerce(a), self._coerce(b)
        if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
            raise ShapeError(f"matmul: {a.value.shape} @ {b.value.shape}")
        return self._emit("matmul", (a, b), a.value @ b.value)

    def transpose(self, a) -> Node:
        a = self._coerce(a)
        return self._emit("transpose", (a,), a.value.T)

    def relu(self, a) -> Node:
        a = self._coerce(a)
        return self._emit("relu", (a,), np.maximum(a.value, 0.0))

    def sum(self, a) -> Node:
        a = self._coerce(a)
        return self._emit("sum", (a,), np.asarray(a.value.sum()))

    def sum0(self, a) -> Node:
        a = self._coerce(a)
        return self._emit("sum0", (a,), a.value.sum(axis=0))

    def mean(self, a) -> Node:
        a = self._coerce(a)
        return self._emit("mean", (a,), np.asarray(a.value.mean()))

    def fill(self, a, shape, c: float = 1.0) -> Node:
        a = self._coerce(a)
        meta = (tuple(shape), float(c))
        return self._emit("fill", (a,), _fwd_fill((a.value,), meta), meta)

    def tile0(self, a, n: int) -> Node:
        a = self._coerce(a)
        return self._emit("tile0", (a,), _fwd_tile0((a.value,), n), n)

    def reshape(self, a, shape) -> Node:
        a = self._coerce(a)
        shape = tuple(shape)
        return self._emit("reshape", (a,), a.value.reshape(shape), shape)

    def slice1(self, a, start: int, stop: int) -> Node:
        a = self._coerce(a)
        if a.value.ndim != 1:
            raise ShapeError("slice1 expects a 1-D node")
        return self._emit("slice1", (a,), a.value[start:stop].copy(), (start, stop))

    def pad1(self, a, start: int, stop: int, n: int) -> Node:
        a = self._coerce(a)
        meta = (start, stop, n)
        return self._emit("pad1", (a,), _fwd_pad1((a.value,), meta), meta)

    def softmax(self, a) -> Node:
        a = self._coerce(a)
        return self._emit("softmax", (a,), _stable_softmax(a.value))

    def log_softmax(self, a) -> Node:
        a = self._coerce(a)
        return self._emit("log_softmax", (a,), _fwd_log_softmax((a.value,), None))

    def take_rows(self, a, idx) -> Node:
        a = self._coerce(a)
        idx = np.asarray(idx, dtype=np.intp)
        if a.value.ndim != 2 or idx.shape != (a.value.shape[0],):
            raise ShapeError("take_rows expects a 2-D node and one index per row")
        return self._emit("take_rows", (a,), _fwd_take_rows((a.value,), idx), idx)

    # -- replay -----------------------------------------------------------

    def replay(self) -> None:
        """Recompute every non-leaf value in emission order, in place."""
        for node in self.nodes:
            if node.op == "leaf":
                continue
            node.value = _FWD[node.op](tuple(n.value for n in node.inputs), node.meta)


class _NumpyBackend:
    """Adjoint arithmetic on raw arrays (plain backward)."""

    @staticmethod
    def add(a, b):
        return a + b

    @staticmethod
    def neg(a):
        return -a

    @staticmethod
    def scale(a, c):
        return a * c

    @staticmethod
    def mul_value(g, node):
        return g * node.value

    @staticmethod
    def matmul_value_r(g, node):
        return g @ node.value.T

    @staticmethod
    def matmul_value_l(node, g):
        return node.value.T @ g

    @staticmethod
    def transpose(g):
        return g.T

    @staticmethod
    def mask_mul(g, mask):
        return g * mask

    @staticmethod
    def sum(g):
        return np.asarray(g.sum())

    @staticmethod
    def sum0(g):
        return g.sum(axis=0)

    @staticmethod
    def fill(g, shape, c):
        return np.full(shape, float(g) * c)

    @staticmethod
    def tile0(g, n):
        return _fwd_tile0((g,), n)

    @staticmethod
    def reshape(g, shape):
        return g.reshape(shape)

    @staticmethod
    def slice1(g, start, stop):
        return g[start:stop]

    @staticmethod
    def pad1(g, start, stop, n):
        return _fwd_pad1((g,), (start, stop, n))


class _TapeBackend:
    """Adjoint arithmetic emitted as new tape nodes (graph backward)."""

    def __init__(self, tape: Tape):
        self.t = tape

    def add(self, a, b):
        return self.t.add(a, b)

    def neg(self, a):
        return self.t.neg(a)

    def scale(self, a, c):
        return self.t.scale(a, c)

    def mul_value(self, g, node):
        return self.t.mul(g, node)

    def matmul_value_r(self, g, node):
        return self.t.matmul(g, self.t.transpose(node))

    def matmul_value_l(self, node, g):
        return self.t.matmul(self.t.transpose(node), g)

    def transpose(self, g):
        return self.t.transpose(g)

    def mask_mul(self, g, mask):
        return self.t.mul(g, self.t.leaf(mask))

    def sum(self, g):
        return self.t.sum(g)

    def sum0(self, g):
        return self.t.sum0(g)

    def fill(self, g, shape, c):
        return self.t.fill(g, shape, c)

    def tile0(self, g, n):
        return self.t.tile0(g, n)

    def reshape(self, g, shape):
        return self.t.reshape(g, shape)

    def slice1(self, g, start, stop):
        return self.t.slice1(g, start, stop)

    def pad1(self, g, start, stop, n):
        return self.t.pad1(g, start, stop, n)


def _accumulate(adj, node, grad, bk):
    prev = adj.get(node.idx)
    adj[node.idx] = grad if prev is None else bk.add(prev, grad)


def _vjp(bk, node, g, adj):
    """Push node's adjoint g onto its inputs."""
    op = node.op
    ins = node.inputs
    if op == "add":
        a, b = ins
        _accumulate(adj, a, g, bk)
        gb = bk.sum0(g) if b.value.ndim == 1 and a.value.ndim == 2 else g
        _accumulate(adj, b, gb, bk)
    elif op == "sub":
        a, b = ins
        _accumulate(adj, a, g, bk)
        gb = bk.sum0(g) if b.value.ndim == 1 and a.value.ndim == 2 else g
        _accumulate(adj, b, bk.neg(gb), bk)
    elif op == "mul":
        a, b = ins
        if a.value.shape == b.value.shape:
            _accumulate(adj, a, bk.mul_value(g, b), bk)
            _accumulate(adj, b, bk.mul_value(g, a), bk)
        elif a.value.ndim == 0:
            _accumulate(adj, a, bk.sum(bk.mul_value(g, b)), bk)
            _accumulate(adj, b, bk.mul_value(g, a), bk)
        else:
            _accumulate(adj, a, bk.mul_value(g, b), bk)
            _accumulate(adj, b, bk.sum(bk.mul_value(g, a)), bk)
    elif op == "neg":
        _accumulate(adj, ins[0], bk.neg(g), bk)
    elif op == "scale":
        _accumulate(adj, ins[0], bk.scale(g, node.meta), bk)
    elif op == "matmul":
        a, b = ins
        _accumulate(adj, a, bk.matmul_value_r(g, b), bk)
        _accumulate(adj, b, bk.matmul_value_l(a, g), bk)
    elif op == "transpose":
        _accumulate(adj, ins[0], bk.transpose(g), bk)
    elif op == "relu":
        mask = (ins[0].value > 0).astype(np.float64)
        _accumulate(adj, ins[0], bk.mask_mul(g, mask), bk)
    elif op == "sum":
        _accumulate(adj, ins[0], bk.fill(g, ins[0].value.shape, 1.0), bk)
    elif op == "sum0":
        _accumulate(adj, ins[0], bk.tile0(g, ins[0].value.shape[0]), bk)
    elif op == "mean":
        _accumulate(adj, ins[0], bk.fill(g, ins[0].value.shape, 1.0 / ins[0].value.size), bk)
    elif op == "fill":
        shape, c = node.meta
        _accumulate(adj, ins[0], bk.scale(bk.sum(g), c), bk)
    elif op == "tile0":
        _accumulate(adj, ins[0], bk.sum0(g), bk)
    elif op == "reshape":
        _accumulate(adj, ins[0], bk.reshape(g, ins[0].value.shape), bk)
    elif op == "slice1":
        start, stop = node.meta
        _accumulate(adj, ins[0], bk.pad1(g, start, stop, ins[0].value.shape[0]), bk)
    elif op == "pad1":
        start, stop, _ = node.meta
        _accumulate(adj, ins[0], bk.slice1(g, start, stop), bk)
    elif op == "softmax":
        p = node.value
        s = (g * p).sum(axis=-1, keepdims=True)
        _accumulate(adj, ins[0], p * (g - s), bk)
    elif op == "log_softmax":
        p = np.exp(node.value)
        s = g.sum(axis=-1, keepdims=True)
        _accumulate(adj, ins[0], g - p * s, bk)
    elif op == "take_rows":
        out = np.zeros_like(ins[0].value)
        out[np.arange(out.shape[0]), node.meta] = g
        _accumulate(adj, ins[0], out, bk)
    elif op == "leaf":
        pass
    else:
        raise AssertionError(f"no VJP rule for op {op!r}")


def backward_nodes(loss: Node, wrt: Sequence[Node], build_graph: bool = False):
    """Reverse sweep from a scalar loss node.

    Returns one adjoint per node in ``wrt``: numpy arrays in plain mode, tape
    nodes in graph mode. Nodes that do not influence the loss get exact zeros.
    """
    if loss.value.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
    tape = loss.tape
    bk = _TapeBackend(tape) if build_graph else _NumpyBackend()
    adj: dict[int, object] = {}
    seed = np.ones(loss.value.shape)
    adj[loss.idx] = tape.leaf(seed) if build_graph else seed
    # Emission order is a topological order, so a single reverse pass suffices.
    for i in range(loss.idx, -1, -1):
        g = adj.get(i)
        if g is None:
            continue
        node = tape.nodes[i]
        if build_graph and node.op not in _GRAPH_OK:
            raise ContractError(f"op {node.op!r} supports first-order gradients only")
        _vjp(bk, node, g, adj)
    out = []
    for w in wrt:
        g = adj.get(w.idx)
        if g is None:
            zeros = np.zeros_like(w.value)
            g = tape.leaf(zeros) if build_graph else zeros
        out.append(g)
    return out
