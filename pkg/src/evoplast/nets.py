"""Feed-forward network definitions over flat parameter vectors.

A network is a torso of fully-connected layers plus one or more linear heads
(identity or softmax). Parameters live in a single flat float64 vector whose
layout maps each weight matrix and bias to an index range, so evolutionary
operators and gradient code share one representation.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import (
    ContractError,
    Node,
    NumericError,
    ShapeError,
    Tape,
    backward_nodes,
)

TORSO_ACTIVATIONS = ("relu", "identity")
HEAD_ACTIVATIONS = ("identity", "softmax")


@dataclass(frozen=True)
class HeadSpec:
    name: str
    dim: int
    activation: str = "identity"


@dataclass(frozen=True)
class NetworkArch:
    """Torso layer sizes (input first), torso activation, and output heads."""

    layer_sizes: tuple[int, ...]
    activation: str
    heads: tuple[HeadSpec, ...]

    def __post_init__(self):
        if len(self.layer_sizes) < 1:
            raise ContractError("arch needs at least one layer")
        if any(s < 1 for s in self.layer_sizes):
            raise ContractError("layer sizes must be positive")
        if self.activation not in TORSO_ACTIVATIONS:
            raise ContractError(f"unknown torso activation {self.activation!r}")
        if not self.heads:
            raise ContractError("arch needs at least one head")
        for h in self.heads:
            if h.activation not in HEAD_ACTIVATIONS:
                raise ContractError(f"unknown head activation {h.activation!r}")
            if h.dim < 1:
                raise ContractError(f"head {h.name!r} needs positive output dim")
            if h.activation == "softmax" and h.dim < 2:
                raise ContractError(f"softmax head {h.name!r} needs output dim >= 2")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def torso_out(self) -> int:
        return self.layer_sizes[-1]


@dataclass(frozen=True)
class LayoutEntry:
    name: str
    start: int
    stop: int
    shape: tuple[int, ...]


class ParamLayout:
    """Disjoint index ranges covering [0, total) for every weight and bias."""

    def __init__(self, entries: Sequence[LayoutEntry]):
        self.entries = tuple(entries)
        self.by_name = {e.name: e for e in self.entries}
        self.total = self.entries[-1].stop if self.entries else 0

    def __eq__(self, other):
        return isinstance(other, ParamLayout) and self.entries == other.entries

    def __hash__(self):
        return hash(self.entries)


@functools.lru_cache(maxsize=None)
def build_layout(arch: NetworkArch) -> ParamLayout:
    entries = []
    pos = 0

    def put(name, shape):
        nonlocal pos
        n = int(np.prod(shape))
        entries.append(LayoutEntry(name, pos, pos + n, tuple(shape)))
        pos += n

    sizes = arch.layer_sizes
    for i in range(len(sizes) - 1):
        put(f"torso{i}.w", (sizes[i], sizes[i + 1]))
        put(f"torso{i}.b", (sizes[i + 1],))
    for h in arch.heads:
        put(f"head.{h.name}.w", (arch.torso_out, h.dim))
        put(f"head.{h.name}.b", (h.dim,))
    return ParamLayout(entries)


def param_count(arch: NetworkArch) -> int:
    return build_layout(arch).total


@dataclass
class ParamVector:
    """Flat parameter values plus the layout that interprets them."""

    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.shape[0] != self.layout.total:
            raise ShapeError(
                f"params length {self.values.size} does not match layout total {self.layout.total}"
            )

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def view(self, name: str) -> np.ndarray:
        e = self.layout.by_name[name]
        return self.values[e.start:e.stop].reshape(e.shape)

    def __len__(self) -> int:
        return self.values.shape[0]


def init_params(arch: NetworkArch, rng: np.random.Generator, std: float = 0.01) -> ParamVector:
    layout = build_layout(arch)
    return ParamVector(rng.normal(0.0, std, layout.total), layout)


def zeros_params(arch: NetworkArch) -> ParamVector:
    layout = build_layout(arch)
    return ParamVector(np.zeros(layout.total), layout)


def sine_arch() -> NetworkArch:
    return NetworkArch((1, 40, 40), "relu", (HeadSpec("out", 1, "identity"),))


def a2c_arch(obs_dim: int = 3, n_actions: int = 12, torso: int = 100) -> NetworkArch:
    return NetworkArch(
        (obs_dim, torso, torso),
        "relu",
        (HeadSpec("policy", n_actions, "softmax"), HeadSpec("value", 1, "identity")),
    )


def net_apply(tape: Tape, arch: NetworkArch, p_node: Node, x) -> dict[str, Node]:
    """Build the network graph on a tape; returns pre-activation head nodes."""
    layout = build_layout(arch)
    if p_node.value.shape != (layout.total,):
        raise ShapeError(
            f"params length {p_node.value.size} does not match arch parameter count {layout.total}"
        )

    def mat(name):
        e = layout.by_name[name]
        return tape.reshape(tape.slice1(p_node, e.start, e.stop), e.shape)

    def vec(name):
        e = layout.by_name[name]
        return tape.slice1(p_node, e.start, e.stop)

    h = x if isinstance(x, Node) else tape.leaf(x)
    if h.value.ndim != 2 or h.value.shape[1] != arch.input_dim:
        raise ShapeError(
            f"input dim {h.value.shape[-1]} does not match layer 'input' size {arch.input_dim}"
        )
    for i in range(len(arch.layer_sizes) - 1):
        z = tape.add(tape.matmul(h, mat(f"torso{i}.w")), vec(f"torso{i}.b"))
        h = tape.relu(z) if arch.activation == "relu" else z
    out = {}
    for hd in arch.heads:
        out[hd.name] = tape.add(tape.matmul(h, mat(f"head.{hd.name}.w")), vec(f"head.{hd.name}.b"))
    return out


@dataclass
class ForwardPass:
    """Tape plus the nodes a caller needs to differentiate or inspect."""

    tape: Tape
    arch: NetworkArch
    param_node: Node
    input_node: Node
    head_pre: dict[str, Node]
    head_out: dict[str, Node]
    squeezed: bool


def forward(arch: NetworkArch, params: ParamVector, x) -> tuple[dict[str, np.ndarray], ForwardPass]:
    """Run the network, returning per-head outputs and the replayable tape.

    Accepts a single input vector or a (batch, input_dim) matrix; outputs
    mirror the input's batchedness. Softmax heads return row distributions.
    """
    x = np.asarray(x, dtype=np.float64)
    squeezed = x.ndim == 1
    x2 = x[None, :] if squeezed else x
    if x2.ndim != 2 or x2.shape[1] != arch.input_dim:
        raise ShapeError(
            f"input dim {x2.shape[-1] if x2.ndim else 0} does not match layer 'input' size {arch.input_dim}"
        )
    tape = Tape()
    p_node = tape.leaf(params.values)
    x_node = tape.leaf(x2)
    pre = net_apply(tape, arch, p_node, x_node)
    head_out = {}
    outputs = {}
    for hd in arch.heads:
        node = tape.softmax(pre[hd.name]) if hd.activation == "softmax" else pre[hd.name]
        head_out[hd.name] = node
        outputs[hd.name] = node.value[0] if squeezed else node.value
    fwd = ForwardPass(tape, arch, p_node, x_node, pre, head_out, squeezed)
    return outputs, fwd


def _as_batch(x, input_dim: int) -> np.ndarray:
    """Coerce data to (batch, input_dim); 1-D input is a batch of scalars
    when input_dim is 1, otherwise a single sample."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None] if input_dim == 1 else x[None, :]
    return x


def mse_node(tape: Tape, arch: NetworkArch, p_node: Node, x, y, head: str = "out") -> Node:
    """Mean squared error of one identity head against targets, as a node."""
    if not isinstance(x, Node):
        x = tape.leaf(_as_batch(x, arch.input_dim))
    pre = net_apply(tape, arch, p_node, x)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    d = tape.sub(pre[head], tape.leaf(y))
    return tape.mean(tape.mul(d, d))


def backward(fwd: ForwardPass, loss_node: Node) -> ParamVector:
    """Gradient of a scalar loss node with respect to the forward's params."""
    grad = backward_nodes(loss_node, [fwd.param_node])[0]
    layout = build_layout(fwd.arch)
    return ParamVector(grad, layout)


def sgd_step(
    params: ParamVector,
    grad: ParamVector,
    lr: float,
    mask: Optional[np.ndarray] = None,
) -> ParamVector:
    """One gradient step; coordinates with mask bit 0 are returned untouched."""
    if grad.layout != params.layout:
        raise ShapeError("gradient layout does not match params layout")
    if lr <= 0:
        raise ContractError("learning rate must be positive")
    bad = ~np.isfinite(grad.values)
    if bad.any():
        raise NumericError(f"non-finite gradient at coordinate {int(np.argmax(bad))}")
    out = params.values.copy()
    if mask is None:
        out -= lr * grad.values
    else:
        mask = np.asarray(mask)
        if mask.shape != params.values.shape:
            raise ShapeError("mask length does not match params length")
        on = mask != 0
        out[on] -= lr * grad.values[on]
    return ParamVector(out, params.layout)


def meta_grad(
    arch: NetworkArch,
    params: ParamVector,
    inner_data: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]],
    alpha: float,
    n_inner: int,
    unroll_limit: int = 8,
) -> ParamVector:
    """Gradient of mean post-adaptation validation loss with respect to the
    pre-adaptation parameters, differentiated through the inner SGD steps.

    ``inner_data`` holds (x_train, y_train, x_val, y_val) per task. Second
    order terms are kept by emitting the inner backward passes as tape ops.
    """
    if n_inner < 1:
        raise ContractError("n_inner must be >= 1")
    if n_inner > unroll_limit:
        raise ContractError(
            f"n_inner={n_inner} exceeds the unroll limit {unroll_limit}"
        )
    if not inner_data:
        raise ContractError("inner_data must be non-empty")
    tape = Tape()
    p0 = tape.leaf(params.values)
    total = None
    for x_tr, y_tr, x_va, y_va in inner_data:
        p = p0
        for _ in range(n_inner):
            loss = mse_node(tape, arch, p, x_tr, y_tr)
            g = backward_nodes(loss, [p], build_graph=True)[0]
            p = tape.sub(p, tape.scale(g, alpha))
        vloss = mse_node(tape, arch, p, x_va, y_va)
        total = vloss if total is None else tape.add(total, vloss)
    mean_val = tape.scale(total, 1.0 / len(inner_data))
    grad = backward_nodes(mean_val, [p0])[0]
    return ParamVector(grad, params.layout)
