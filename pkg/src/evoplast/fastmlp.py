"""Direct numpy forward/backward for flat-parameter MLPs.

The tape in ``autodiff`` is the reference implementation; these routines
compute the same quantities without recording anything, which is what keeps
inner-loop learning and per-step action selection affordable. Tests pin them
against the tape.
"""

from __future__ import annotations

import numpy as np

from .autodiff import _stable_softmax
from .nets import NetworkArch, build_layout


class FlatMLP:
    """Pre-resolved parameter offsets for one architecture."""

    def __init__(self, arch: NetworkArch):
        layout = build_layout(arch)
        self.arch = arch
        self.layout = layout
        self.total = layout.total
        self.relu = arch.activation == "relu"
        self.torso = []
        for i in range(len(arch.layer_sizes) - 1):
            w = layout.by_name[f"torso{i}.w"]
            b = layout.by_name[f"torso{i}.b"]
            self.torso.append((w.start, w.stop, w.shape, b.start, b.stop))
        self.heads = []
        for hd in arch.heads:
            w = layout.by_name[f"head.{hd.name}.w"]
            b = layout.by_name[f"head.{hd.name}.b"]
            self.heads.append((hd.name, w.start, w.stop, w.shape, b.start, b.stop, hd.activation))

    # -- inference ---------------------------------------------------------

    def act(self, values: np.ndarray, obs: np.ndarray) -> dict[str, np.ndarray]:
        """Single-observation forward; softmax heads come back normalized."""
        h = obs
        for ws, we, wsh, bs, be in self.torso:
            h = h @ values[ws:we].reshape(wsh) + values[bs:be]
            if self.relu:
                h = np.maximum(h, 0.0)
        out = {}
        for name, ws, we, wsh, bs, be, activation in self.heads:
            z = h @ values[ws:we].reshape(wsh) + values[bs:be]
            out[name] = _stable_softmax(z) if activation == "softmax" else z
        return out

    def forward(self, values: np.ndarray, x2: np.ndarray):
        """Batched forward. Returns (head outputs, torso cache for backward).

        The cache holds post-activation layer inputs and pre-activation torso
        values; head entries are pre-activation.
        """
        acts = [x2]
        pres = []
        h = x2
        for ws, we, wsh, bs, be in self.torso:
            z = h @ values[ws:we].reshape(wsh) + values[bs:be]
            pres.append(z)
            h = np.maximum(z, 0.0) if self.relu else z
            acts.append(h)
        head_pre = {}
        for name, ws, we, wsh, bs, be, _ in self.heads:
            head_pre[name] = h @ values[ws:we].reshape(wsh) + values[bs:be]
        return head_pre, (acts, pres)

    # -- gradients ---------------------------------------------------------

    def backward_from_heads(
        self,
        values: np.ndarray,
        cache,
        head_pre_grads: dict[str, np.ndarray],
    ) -> np.ndarray:
        """Backpropagate given dLoss/d(head pre-activation) for each head.

        Heads absent from ``head_pre_grads`` contribute nothing (their
        parameter gradients stay exactly zero).
        """
        acts, pres = cache
        g = np.zeros(self.total)
        gh = None
        for name, ws, we, wsh, bs, be, _ in self.heads:
            gpre = head_pre_grads.get(name)
            if gpre is None:
                continue
            g[ws:we] = (acts[-1].T @ gpre).ravel()
            g[bs:be] = gpre.sum(axis=0)
            contrib = gpre @ values[ws:we].reshape(wsh).T
            gh = contrib if gh is None else gh + contrib
        if gh is None:
            return g
        for i in range(len(self.torso) - 1, -1, -1):
            ws, we, wsh, bs, be = self.torso[i]
            dz = gh * (pres[i] > 0.0) if self.relu else gh
            g[ws:we] = (acts[i].T @ dz).ravel()
            g[bs:be] = dz.sum(axis=0)
            if i > 0:
                gh = dz @ values[ws:we].reshape(wsh).T
        return g

    def mse_grad(self, values: np.ndarray, x2: np.ndarray, y2: np.ndarray, head: str = "out"):
        """Loss and flat gradient of mean squared error on one identity head."""
        head_pre, cache = self.forward(values, x2)
        d = head_pre[head] - y2
        loss = float((d * d).mean())
        delta = d * (2.0 / d.size)
        grad = self.backward_from_heads(values, cache, {head: delta})
        return loss, grad
