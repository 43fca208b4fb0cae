"""Model-agnostic meta-learning on the sinusoid distribution, plus the
pooled-SGD pretraining baseline it is compared against.

The outer optimizer is plain gradient descent on the mean post-adaptation
validation loss; second-order terms come from differentiating through the
inner steps on the tape.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import ContractError
from .fastmlp import FlatMLP
from .nets import NetworkArch, ParamVector, meta_grad, sine_arch
from .sine import X_RANGE, SineTask, sample_batch

# (x_train, y_train, x_val, y_val) per task
TaskData = tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
TaskSampler = Callable[[np.random.Generator], Sequence[TaskData]]


@dataclass(frozen=True)
class MamlConfig:
    alpha: float = 0.01  # inner step size
    beta: float = 0.001  # outer step size
    meta_batch: int = 25
    k_shot: int = 10
    n_inner_train: int = 1
    n_inner_eval: int = 5

    def __post_init__(self):
        if self.alpha <= 0:
            raise ContractError("alpha must be positive")
        if self.beta < 0:
            raise ContractError("beta must be non-negative")
        if self.meta_batch < 1 or self.k_shot < 1:
            raise ContractError("meta_batch and k_shot must be positive")
        if self.n_inner_train < 1 or self.n_inner_eval < 0:
            raise ContractError("n_inner_train >= 1 and n_inner_eval >= 0 required")


def sine_task_sampler(cfg: MamlConfig, x_range=X_RANGE) -> TaskSampler:
    """Fresh tasks with fresh K-shot support and validation points each call.

    One outer step therefore consumes meta_batch * 2 * k_shot labelled points,
    the same data budget per step as one shared evolution batch at defaults.
    """

    def sampler(rng: np.random.Generator) -> list[TaskData]:
        batch = sample_batch(
            rng,
            n_tasks=cfg.meta_batch,
            k_train=cfg.k_shot,
            k_test=cfg.k_shot,
            x_range=x_range,
        )
        return [
            (batch.x_train[i], batch.y_train[i], batch.x_test[i], batch.y_test[i])
            for i in range(cfg.meta_batch)
        ]

    return sampler


def maml_outer_step(
    theta: ParamVector,
    cfg: MamlConfig,
    task_sampler: TaskSampler,
    rng: np.random.Generator,
    arch: Optional[NetworkArch] = None,
) -> ParamVector:
    """theta - beta * d/dtheta [mean over tasks of val loss after adaptation]."""
    arch = arch or sine_arch()
    data = list(task_sampler(rng))
    if len(data) != cfg.meta_batch:
        raise ContractError(f"sampler yielded {len(data)} tasks, expected {cfg.meta_batch}")
    g = meta_grad(arch, theta, data, cfg.alpha, cfg.n_inner_train)
    if cfg.beta == 0.0:
        return theta
    return ParamVector(theta.values - cfg.beta * g.values, theta.layout)


def adapt_and_eval(
    theta: ParamVector,
    task: SineTask,
    k_shot: int,
    n_steps: int,
    alpha: float,
    rng: np.random.Generator,
    x_range=X_RANGE,
    arch: Optional[NetworkArch] = None,
) -> float:
    """Test MSE on fresh points after n_steps of adaptation from theta.
    theta itself is left untouched."""
    arch = arch or sine_arch()
    mlp = FlatMLP(arch)
    x = rng.uniform(*x_range, size=2 * k_shot)
    y = task.y(x)
    x_tr, y_tr = x[:k_shot, None], y[:k_shot, None]
    x_te, y_te = x[k_shot:, None], y[k_shot:]
    v = theta.values
    for _ in range(n_steps):
        _, g = mlp.mse_grad(v, x_tr, y_tr)
        v = v - alpha * g
    pre, _ = mlp.forward(v, x_te)
    d = pre["out"][:, 0] - y_te
    return float((d * d).mean())


def pretrain_step(
    theta: ParamVector,
    cfg: MamlConfig,
    task_sampler: TaskSampler,
    rng: np.random.Generator,
    lr: Optional[float] = None,
    arch: Optional[NetworkArch] = None,
) -> ParamVector:
    """Baseline: one SGD step on the pooled regression loss over the same
    task draw, with no inner adaptation. Uses alpha as its rate by default."""
    arch = arch or sine_arch()
    mlp = FlatMLP(arch)
    data = list(task_sampler(rng))
    xs = np.concatenate([np.concatenate([d[0], d[2]]) for d in data])
    ys = np.concatenate([np.concatenate([d[1], d[3]]) for d in data])
    _, g = mlp.mse_grad(theta.values, xs[:, None], ys[:, None])
    rate = cfg.alpha if lr is None else lr
    return ParamVector(theta.values - rate * g, theta.layout)


def train_maml(
    theta: ParamVector,
    cfg: MamlConfig,
    n_outer: int,
    rng: np.random.Generator,
    arch: Optional[NetworkArch] = None,
    sampler: Optional[TaskSampler] = None,
) -> ParamVector:
    sampler = sampler or sine_task_sampler(cfg)
    for _ in range(n_outer):
        theta = maml_outer_step(theta, cfg, sampler, rng, arch)
    return theta


def train_pretrained(
    theta: ParamVector,
    cfg: MamlConfig,
    n_outer: int,
    rng: np.random.Generator,
    lr: Optional[float] = None,
    arch: Optional[NetworkArch] = None,
    sampler: Optional[TaskSampler] = None,
) -> ParamVector:
    sampler = sampler or sine_task_sampler(cfg)
    for _ in range(n_outer):
        theta = pretrain_step(theta, cfg, sampler, rng, lr, arch)
    return theta


def adaptation_descends(
    theta: ParamVector,
    cfg: MamlConfig,
    rng: np.random.Generator,
    n_tasks: int = 100,
    arch: Optional[NetworkArch] = None,
) -> float:
    """Fraction of random tasks on which one inner step lowers training loss.
    A sane meta-trained net should sit near 1.0."""
    arch = arch or sine_arch()
    mlp = FlatMLP(arch)
    hits = 0
    for _ in range(n_tasks):
        amp = rng.uniform(0.1, 5.0)
        ph = rng.uniform(0.0, np.pi)
        task = SineTask(float(amp), float(ph))
        x = rng.uniform(*X_RANGE, size=cfg.k_shot)
        y = task.y(x)
        before, g = mlp.mse_grad(theta.values, x[:, None], y[:, None])
        after, _ = mlp.mse_grad(theta.values - cfg.alpha * g, x[:, None], y[:, None])
        hits += after < before
    return hits / n_tasks
