"""Sinusoid regression: the task distribution, shared evaluation batches,
and the adaptation-based fitness used by the evolutionary searches.

Fitness is Baldwinian by construction: a genome is scored by how well a few
gradient steps from its parameters fit held-out points, and the genome itself
is never modified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import ContractError
from .evolution import Genome
from .fastmlp import FlatMLP
from .nets import sine_arch

AMPLITUDE_RANGE = (0.1, 5.0)
PHASE_RANGE = (0.0, math.pi)
X_RANGE = (-5.0, 5.0)  # standard sampling interval for this benchmark


@dataclass(frozen=True)
class SineTask:
    amplitude: float
    phase: float

    def __post_init__(self):
        if not (AMPLITUDE_RANGE[0] <= self.amplitude <= AMPLITUDE_RANGE[1]):
            raise ContractError(f"amplitude {self.amplitude} outside {AMPLITUDE_RANGE}")
        if not (PHASE_RANGE[0] <= self.phase <= PHASE_RANGE[1]):
            raise ContractError(f"phase {self.phase} outside {PHASE_RANGE}")

    def y(self, x: np.ndarray) -> np.ndarray:
        return self.amplitude * np.sin(x + self.phase)


@dataclass(frozen=True)
class SineBatch:
    tasks: tuple[SineTask, ...]
    x_train: np.ndarray  # (n_tasks, k_train)
    y_train: np.ndarray
    x_test: np.ndarray  # (n_tasks, k_test)
    y_test: np.ndarray

    def __post_init__(self):
        n = len(self.tasks)
        if self.x_train.shape[0] != n or self.x_test.shape[0] != n:
            raise ContractError("per-task data rows must match the task count")
        for name in ("train", "test"):
            x = getattr(self, f"x_{name}")
            y = getattr(self, f"y_{name}")
            if x.shape != y.shape:
                raise ContractError(f"{name} x/y shapes differ")
            amp = np.array([t.amplitude for t in self.tasks])[:, None]
            ph = np.array([t.phase for t in self.tasks])[:, None]
            if np.abs(y - amp * np.sin(x + ph)).max() > 1e-12:
                raise ContractError(f"{name} targets are not on the task sinusoids")

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)


def sample_batch(
    rng: np.random.Generator,
    n_tasks: int = 25,
    k_train: int = 10,
    k_test: int = 10,
    x_range: tuple[float, float] = X_RANGE,
) -> SineBatch:
    """Draw tasks and their support/query points. Same seed, same batch."""
    amps = rng.uniform(*AMPLITUDE_RANGE, size=n_tasks)
    phases = rng.uniform(*PHASE_RANGE, size=n_tasks)
    x = rng.uniform(*x_range, size=(n_tasks, k_train + k_test))
    y = amps[:, None] * np.sin(x + phases[:, None])
    tasks = tuple(SineTask(float(a), float(p)) for a, p in zip(amps, phases))
    return SineBatch(
        tasks,
        x[:, :k_train],
        y[:, :k_train],
        x[:, k_train:],
        y[:, k_train:],
    )


_SINE_MLP = None


def _sine_mlp() -> FlatMLP:
    global _SINE_MLP
    if _SINE_MLP is None:
        _SINE_MLP = FlatMLP(sine_arch())
    return _SINE_MLP


def adapt_values(
    values: np.ndarray,
    x_train: np.ndarray,
    y_train: np.ndarray,
    n_inner: int,
    lr: float,
    mask: np.ndarray | None = None,
    mlp: FlatMLP | None = None,
) -> np.ndarray:
    """n_inner SGD steps on one task's training points; the input array is
    left untouched. Non-finite values are allowed to propagate — callers
    score them, they do not crash on them."""
    mlp = mlp or _sine_mlp()
    x2 = x_train[:, None]
    y2 = y_train[:, None]
    v = values
    for _ in range(n_inner):
        _, g = mlp.mse_grad(v, x2, y2)
        if mask is None:
            v = v - lr * g
        else:
            v = v.copy()
            on = mask != 0
            v[on] -= lr * g[on]
    return v


def post_adaptation_mse(
    values: np.ndarray,
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_test: np.ndarray,
    y_test: np.ndarray,
    n_inner: int,
    lr: float,
    mask: np.ndarray | None = None,
) -> float:
    mlp = _sine_mlp()
    v = adapt_values(values, x_train, y_train, n_inner, lr, mask, mlp)
    pre, _ = mlp.forward(v, x_test[:, None])
    d = pre["out"][:, 0] - y_test
    return float((d * d).mean())


def sine_fitness(genome: Genome, batch: SineBatch, n_inner: int = 5) -> float:
    """Negated mean post-adaptation test MSE over the batch. The genome's own
    learning rate drives the inner steps; zero is the unreachable-unless-exact
    upper bound."""
    total = 0.0
    for k in range(batch.n_tasks):
        total += post_adaptation_mse(
            genome.params.values,
            batch.x_train[k],
            batch.y_train[k],
            batch.x_test[k],
            batch.y_test[k],
            n_inner,
            genome.hyper.learning_rate,
            genome.mask,
        )
    fitness = -total / batch.n_tasks
    return fitness if np.isfinite(fitness) else float("-inf")


def adaptation_curve(genome: Genome, batch: SineBatch, max_steps: int = 10) -> np.ndarray:
    """Mean test MSE after k = 0..max_steps inner steps; the learning-speed
    curve a run's artifacts record."""
    mlp = _sine_mlp()
    lr = genome.hyper.learning_rate
    mask = genome.mask
    out = np.zeros(max_steps + 1)
    for k in range(batch.n_tasks):
        v = genome.params.values
        x2 = batch.x_train[k][:, None]
        y2 = batch.y_train[k][:, None]
        xt = batch.x_test[k][:, None]
        yt = batch.y_test[k]
        for step in range(max_steps + 1):
            pre, _ = mlp.forward(v, xt)
            d = pre["out"][:, 0] - yt
            out[step] += (d * d).mean()
            if step == max_steps:
                break
            _, g = mlp.mse_grad(v, x2, y2)
            if mask is None:
                v = v - lr * g
            else:
                v = v.copy()
                on = mask != 0
                v[on] -= lr * g[on]
    return out / batch.n_tasks
