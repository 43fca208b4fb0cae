"""Surrogate control domain: a 1-D saturating-drive point mass with
goal-velocity and goal-direction task families, and the advantage
actor-critic inner learner with evolvable discrete macro-actions.

The agent never observes which task it is in; within an episode the only
route to the goal is reward-driven learning (or, without learning, a fixed
compromise policy).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .autodiff import ContractError, Tape
from .evolution import Genome, Hyperparams
from .fastmlp import FlatMLP
from .lifetime import EpisodeSeeder, EvalReport, InheritanceMode, Kind, evaluate
from .nets import NetworkArch, ParamVector, a2c_arch, net_apply

N_ACTIONS = 12


@dataclass(frozen=True)
class EnvConfig:
    damping: float = 0.1
    dt: float = 0.01
    gains: tuple[float, ...] = (21.0, 10.5, 5.25)
    episode_len: int = 3000
    pos_scale: float = 10.0

    def __post_init__(self):
        if not (0.0 < self.damping < 1.0):
            raise ContractError("damping must lie in (0, 1)")
        if self.dt <= 0 or self.episode_len < 1:
            raise ContractError("dt and episode_len must be positive")

    @property
    def actuators(self) -> int:
        return len(self.gains)

    @property
    def v_max(self) -> float:
        """Top speed: fixed point of v = v(1-damping) + dt*max_drive."""
        return self.dt * sum(self.gains) * math.tanh(1.0) / self.damping


@dataclass(frozen=True)
class RLTask:
    kind: str  # "velocity" | "direction"
    value: float

    def __post_init__(self):
        if self.kind not in ("velocity", "direction"):
            raise ContractError(f"unknown task kind {self.kind!r}")
        if self.kind == "direction" and self.value not in (-1.0, 1.0):
            raise ContractError("direction tasks take sign +1 or -1")

    @property
    def label(self) -> str:
        if self.kind == "velocity":
            return f"vel:{self.value:g}"
        return "dir:+1" if self.value > 0 else "dir:-1"

    def reward(self, velocity: float) -> float:
        if self.kind == "velocity":
            return -abs(velocity - self.value)
        return self.value * velocity


VELOCITY_TARGETS = tuple(round(0.2 * i, 1) for i in range(1, 11))


def make_tasks(kind: str, n_episodes: int = 10) -> list[RLTask]:
    """Velocity: exhaustive ascending targets. Direction: alternating signs."""
    if kind == "velocity":
        if n_episodes != len(VELOCITY_TARGETS):
            raise ContractError("velocity family is exhaustive over its 10 targets")
        return [RLTask("velocity", t) for t in VELOCITY_TARGETS]
    if kind == "direction":
        return [RLTask("direction", 1.0 if k % 2 == 0 else -1.0) for k in range(n_episodes)]
    raise ContractError(f"unknown task family {kind!r}")


@dataclass(frozen=True)
class SurrogateEnv:
    cfg: EnvConfig
    task: RLTask
    position: float = 0.0
    velocity: float = 0.0
    step_count: int = 0
    bad_torque_count: int = 0

    @property
    def done(self) -> bool:
        return self.step_count >= self.cfg.episode_len


def env_reset(cfg: EnvConfig, task: RLTask) -> SurrogateEnv:
    return SurrogateEnv(cfg, task)


def env_observe(env: SurrogateEnv) -> np.ndarray:
    phase = env.step_count / env.cfg.episode_len
    return np.array(
        [math.tanh(env.position / env.cfg.pos_scale), env.velocity, phase]
    )


def env_step(env: SurrogateEnv, torques: np.ndarray) -> tuple[SurrogateEnv, np.ndarray, float]:
    """Advance one tick: saturating actuator drive, linear damping, velocity
    integration. Non-finite torques are zeroed and counted."""
    if env.done:
        raise ContractError("episode is over")
    t = np.asarray(torques, dtype=np.float64)
    if t.shape != (env.cfg.actuators,):
        raise ContractError(f"expected {env.cfg.actuators} torques, got shape {t.shape}")
    bad = int((~np.isfinite(t)).sum())
    if bad:
        t = np.where(np.isnan(t), 0.0, t)  # infinities clamp below, sign intact
    t = np.clip(t, -1.0, 1.0)
    drive = float(np.dot(env.cfg.gains, np.tanh(t)))
    v = env.velocity * (1.0 - env.cfg.damping) + env.cfg.dt * drive
    pos = env.position + env.cfg.dt * v
    new = replace(
        env,
        position=pos,
        velocity=v,
        step_count=env.step_count + 1,
        bad_torque_count=env.bad_torque_count + bad,
    )
    return new, env_observe(new), env.task.reward(v)


def select_action(
    policy: np.ndarray, macro: np.ndarray, rng: np.random.Generator
) -> tuple[int, np.ndarray]:
    """Sample from the categorical policy; torques are the chosen macro row
    clamped to the actuator range."""
    if abs(float(policy.sum()) - 1.0) > 1e-6:
        raise ContractError("policy must sum to 1")
    a = int(np.searchsorted(np.cumsum(policy), rng.random()))
    a = min(a, policy.shape[0] - 1)
    return a, np.clip(macro[a], -1.0, 1.0)


def macro_drives(macro: np.ndarray, cfg: EnvConfig) -> np.ndarray:
    """Per-action scalar drive: what each macro row produces through the
    actuator saturation and gains. Precomputable because rows are constant
    within an evaluation."""
    if macro.shape != (N_ACTIONS, cfg.actuators):
        raise ContractError(
            f"macro matrix must be {N_ACTIONS}x{cfg.actuators}, got {macro.shape}"
        )
    return np.tanh(np.clip(macro, -1.0, 1.0)) @ np.asarray(cfg.gains)


def reference_controller(task: RLTask, cfg: EnvConfig, steps: Optional[int] = None) -> float:
    """Hand-coded saturating feedback controller; returns mean per-step
    reward. Exists to certify that the environment admits the behaviors
    selection is supposed to find."""
    steps = cfg.episode_len if steps is None else steps
    gain_sum = sum(cfg.gains)
    target = task.value if task.kind == "velocity" else task.value * 0.9 * cfg.v_max
    ratio = target * cfg.damping / (cfg.dt * gain_sum)
    u_ff = math.atanh(max(-0.999, min(0.999, ratio)))
    v = 0.0
    total = 0.0
    for _ in range(steps):
        u = max(-1.0, min(1.0, u_ff + 2.0 * (target - v)))
        drive = gain_sum * math.tanh(u)
        v = v * (1.0 - cfg.damping) + cfg.dt * drive
        total += task.reward(v)
    return total / steps


# ------------------------------------------------------------------- A2C


@dataclass(frozen=True)
class A2CConfig:
    """Inner-learner settings. ``reward_scale`` multiplies rewards on the
    update path only (fitness accounting never sees it), which acts as an
    effective learning-rate multiplier on both heads. Short desk-scale
    episodes need it: the within-episode adaptation transient would
    otherwise eat most of the episode at the top of the legal
    learning-rate range. Default 1.0 leaves the update untouched."""

    rollout_len: int = 40
    value_loss_coeff: float = 0.5
    reward_scale: float = 1.0

    def __post_init__(self):
        if self.rollout_len < 1:
            raise ContractError("rollout_len must be positive")
        if not (self.reward_scale > 0 and np.isfinite(self.reward_scale)):
            raise ContractError("reward_scale must be a positive finite real")


@dataclass
class Rollout:
    obs: np.ndarray  # (T, obs_dim)
    actions: np.ndarray  # (T,)
    rewards: np.ndarray  # (T,)
    bootstrap_obs: np.ndarray  # (obs_dim,)


def compute_returns(rewards: np.ndarray, bootstrap_value: float, discount: float) -> np.ndarray:
    """Discounted n-step returns, bootstrapped at the rollout boundary."""
    out = np.empty_like(rewards)
    running = float(bootstrap_value)
    for t in range(rewards.shape[0] - 1, -1, -1):
        running = rewards[t] + discount * running
        out[t] = running
    return out


def entropy_rows(logits: np.ndarray) -> np.ndarray:
    zs = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(zs).sum(axis=-1, keepdims=True))
    logp = zs - lse
    return -(np.exp(logp) * logp).sum(axis=-1)


def policy_head_grad(
    probs: np.ndarray,
    logp: np.ndarray,
    actions: np.ndarray,
    adv: np.ndarray,
    entropy_scale: float,
) -> np.ndarray:
    """d/d(logits) of -sum adv*logpi(a) - entropy_scale*sum H."""
    g = probs * adv[:, None]
    g[np.arange(actions.shape[0]), actions] -= adv
    h = -(probs * logp).sum(axis=1)
    g += entropy_scale * probs * (logp + h[:, None])
    return g


_MLP_CACHE: dict[NetworkArch, FlatMLP] = {}


def _mlp(arch: NetworkArch) -> FlatMLP:
    mlp = _MLP_CACHE.get(arch)
    if mlp is None:
        mlp = _MLP_CACHE[arch] = FlatMLP(arch)
    return mlp


def a2c_loss_node(
    tape: Tape,
    arch: NetworkArch,
    p_node,
    rollout: Rollout,
    hyper: Hyperparams,
    value_loss_coeff: float = 0.5,
    reward_scale: float = 1.0,
):
    """Reference construction of the rollout loss on the tape. Used to pin
    the hand-derived gradients; too slow for the inner loop itself."""
    obs_all = np.vstack([rollout.obs, rollout.bootstrap_obs[None, :]])
    pre = net_apply(tape, arch, p_node, tape.leaf(obs_all))
    T = rollout.obs.shape[0]
    v_all = pre["value"].value[:, 0]
    returns = compute_returns(reward_scale * rollout.rewards, v_all[T], hyper.discount)
    adv = returns - v_all[:T]  # constants: the baseline is detached here

    pol_rows = tape.reshape(
        tape.slice1(tape.reshape(pre["policy"], (-1,)), 0, T * N_ACTIONS), (T, N_ACTIONS)
    )
    logp = tape.log_softmax(pol_rows)
    probs = tape.softmax(pol_rows)
    chosen = tape.take_rows(logp, rollout.actions)
    policy_term = tape.neg(tape.sum(tape.mul(chosen, tape.leaf(adv))))

    v_rows = tape.slice1(tape.reshape(pre["value"], (-1,)), 0, T)
    diff = tape.sub(v_rows, tape.leaf(returns))
    value_term = tape.scale(tape.sum(tape.mul(diff, diff)), value_loss_coeff)

    entropy_term = tape.neg(tape.sum(tape.mul(probs, logp)))
    return tape.add(
        tape.add(policy_term, value_term),
        tape.scale(entropy_term, -hyper.entropy_scale),
    )


def a2c_update(
    params: ParamVector,
    rollout: Rollout,
    cfg: A2CConfig,
    hyper: Hyperparams,
    arch: NetworkArch,
    mask: Optional[np.ndarray] = None,
) -> tuple[ParamVector, bool]:
    """One SGD step on the rollout loss. Returns (params', ok); a non-finite
    loss or gradient leaves the parameters untouched and reports ok=False."""
    T = rollout.obs.shape[0]
    if T != cfg.rollout_len:
        raise ContractError(f"rollout length {T} != configured {cfg.rollout_len}")
    mlp = _mlp(arch)
    obs_all = np.vstack([rollout.obs, rollout.bootstrap_obs[None, :]])
    head_pre, cache = mlp.forward(params.values, obs_all)
    logits = head_pre["policy"][:T]
    v_all = head_pre["value"][:, 0]
    v = v_all[:T]
    returns = compute_returns(cfg.reward_scale * rollout.rewards, v_all[T], hyper.discount)
    adv = returns - v

    zs = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(zs).sum(axis=1, keepdims=True))
    logp = zs - lse
    probs = np.exp(logp)
    rows = np.arange(T)
    h = -(probs * logp).sum(axis=1)
    loss = (
        -float(adv @ logp[rows, rollout.actions])
        + cfg.value_loss_coeff * float((returns - v) @ (returns - v))
        - hyper.entropy_scale * float(h.sum())
    )
    if not np.isfinite(loss):
        return params, False

    g_policy = np.zeros((T + 1, N_ACTIONS))
    g_policy[:T] = policy_head_grad(probs, logp, rollout.actions, adv, hyper.entropy_scale)
    g_value = np.zeros((T + 1, 1))
    g_value[:T, 0] = (2.0 * cfg.value_loss_coeff) * (v - returns)
    grad = mlp.backward_from_heads(params.values, cache, {"policy": g_policy, "value": g_value})
    if not np.isfinite(grad).all():
        return params, False
    out = params.values.copy()
    if mask is None:
        out -= hyper.learning_rate * grad
    else:
        on = mask != 0
        out[on] -= hyper.learning_rate * grad[on]
    return ParamVector(out, params.layout), True


# --------------------------------------------------------------- learner


def make_a2c_learner(arch: NetworkArch, env_cfg: EnvConfig, a2c_cfg: A2CConfig):
    """Builds the per-episode learner: act step-by-step, one update per
    completed rollout (n_inner = 0 disables updates entirely)."""
    if env_cfg.episode_len % a2c_cfg.rollout_len != 0:
        raise ContractError("rollout length must divide episode length")
    mlp = _mlp(arch)
    n_obs = arch.input_dim
    torso = mlp.torso
    pol_idx = next(i for i, h in enumerate(mlp.heads) if h[0] == "policy")
    _, p_ws, p_we, p_wsh, p_bs, p_be, _ = mlp.heads[pol_idx]

    def bind_policy(values: np.ndarray):
        """Weight views and scratch rows for one parameter vector; rebuilt
        only when the vector is replaced, not every step."""
        layers = [
            (values[ws:we].reshape(wsh), values[bs:be], np.empty(wsh[1]))
            for ws, we, wsh, bs, be in torso
        ]
        head_w = values[p_ws:p_we].reshape(p_wsh)
        head_b = values[p_bs:p_be]
        return layers, head_w, head_b, np.empty(p_wsh[1])

    def learner(genome: Genome, start_values, task, n_inner, rng):
        if genome.macro is None:
            raise ContractError("control tasks need a genome with macro actions")
        drives = macro_drives(genome.macro, env_cfg)
        learn = n_inner > 0
        L, T = env_cfg.episode_len, a2c_cfg.rollout_len
        pos_scale = env_cfg.pos_scale
        keep = 1.0 - env_cfg.damping
        dt = env_cfg.dt
        values = start_values
        params = ParamVector(values, genome.params.layout) if learn else None
        layers, head_w, head_b, z = bind_policy(values)
        cum = np.empty(N_ACTIONS)
        obs_buf = np.empty((T, n_obs))
        act_buf = np.empty(T, dtype=np.intp)
        rew_buf = np.empty(T)
        pos = 0.0
        vel = 0.0
        total = 0.0
        updates = 0
        i = 0
        is_vel = task.kind == "velocity"
        goal = task.value
        uniforms = rng.random(L)
        for t in range(L):
            obs_buf[i, 0] = math.tanh(pos / pos_scale)
            obs_buf[i, 1] = vel
            obs_buf[i, 2] = t / L
            hrow = obs_buf[i]
            for w, b, scratch in layers:
                np.dot(hrow, w, out=scratch)
                scratch += b
                np.maximum(scratch, 0.0, out=scratch)
                hrow = scratch
            np.dot(hrow, head_w, out=z)
            z += head_b
            z -= z.max()
            np.exp(z, out=z)
            z /= z.sum()
            np.add.accumulate(z, out=cum)
            a = int(np.searchsorted(cum, uniforms[t]))
            if a >= N_ACTIONS:
                a = N_ACTIONS - 1
            vel = vel * keep + dt * drives[a]
            pos += dt * vel
            r = -abs(vel - goal) if is_vel else goal * vel
            total += r
            act_buf[i] = a
            rew_buf[i] = r
            i += 1
            if i == T:
                if learn:
                    boot = np.array([math.tanh(pos / pos_scale), vel, (t + 1) / L])
                    rollout = Rollout(obs_buf, act_buf, rew_buf, boot)
                    params, _ = a2c_update(
                        params, rollout, a2c_cfg, genome.hyper, arch, genome.mask
                    )
                    values = params.values
                    layers, head_w, head_b, z = bind_policy(values)
                    updates += 1
                i = 0
        return total, values, updates

    return learner


def rl_fitness(
    genome: Genome,
    kind: str,
    mode: InheritanceMode,
    seeder: EpisodeSeeder,
    env_cfg: EnvConfig = EnvConfig(),
    a2c_cfg: A2CConfig = A2CConfig(),
    arch: Optional[NetworkArch] = None,
    fitness_floor: float = -1e9,
) -> EvalReport:
    """Fitness = summed episodic reward over the family's 10 episodes,
    evaluated under the given inheritance rule."""
    if arch is None:
        arch = a2c_arch()
    tasks = make_tasks(kind)
    n_inner = 0 if mode.kind is Kind.DARWIN else 1
    learner = make_a2c_learner(arch, env_cfg, a2c_cfg)
    return evaluate(genome, tasks, mode, n_inner, learner, seeder, fitness_floor)
