"""Population-based outer loops: generational GA, steady-state GA, and
separable NES, plus the mutation operators they share.

Fitness evaluation is always a callback; these routines only own selection,
reproduction and distribution updates, so they work unchanged across the
regression, control and lookup-table domains.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import ContractError
from .nets import ParamVector

LEARNING_RATE_RANGE = (1e-5, 1e-2)
ENTROPY_SCALE_RANGE = (1e-4, 1.0)
DISCOUNT_RANGE = (0.92, 0.9999)


def _clip(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


@dataclass(frozen=True)
class Hyperparams:
    """Evolvable inner-loop settings, each clamped to a closed range."""

    learning_rate: float = 1e-3
    entropy_scale: float = 1e-2
    discount: float = 0.99

    def __post_init__(self):
        for name, rng_ in (
            ("learning_rate", LEARNING_RATE_RANGE),
            ("entropy_scale", ENTROPY_SCALE_RANGE),
            ("discount", DISCOUNT_RANGE),
        ):
            v = getattr(self, name)
            if not (rng_[0] <= v <= rng_[1]):
                raise ContractError(f"{name}={v} outside range {rng_}")

    def mutated(self, rng: np.random.Generator, log_std: float) -> "Hyperparams":
        """Multiplicative log-normal noise on every field, then clamp."""
        draws = rng.normal(0.0, log_std, 3)
        return Hyperparams(
            _clip(self.learning_rate * np.exp(draws[0]), *LEARNING_RATE_RANGE),
            _clip(self.entropy_scale * np.exp(draws[1]), *ENTROPY_SCALE_RANGE),
            _clip(self.discount * np.exp(draws[2]), *DISCOUNT_RANGE),
        )


def sample_hyperparams(rng: np.random.Generator) -> Hyperparams:
    """Log-uniform draw for the scale-like fields, uniform for discount."""
    lo, hi = LEARNING_RATE_RANGE
    lr = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    lo, hi = ENTROPY_SCALE_RANGE
    ent = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    disc = float(rng.uniform(*DISCOUNT_RANGE))
    return Hyperparams(lr, ent, disc)


class IdSource:
    """Per-run genome id allocator; sequential so runs stay reproducible."""

    def __init__(self, start: int = 0):
        self._next = start

    def take(self) -> int:
        i = self._next
        self._next += 1
        return i


@dataclass(frozen=True)
class Genome:
    params: ParamVector
    hyper: Hyperparams
    id: int
    parent_id: Optional[int] = None
    mask: Optional[np.ndarray] = None
    macro: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=np.uint8)
            if m.shape != self.params.values.shape:
                raise ContractError("mask length must equal params length")
            object.__setattr__(self, "mask", m)
        if self.macro is not None:
            mc = np.asarray(self.macro, dtype=np.float64)
            if not np.isfinite(mc).all():
                raise ContractError("macro action entries must be finite")
            object.__setattr__(self, "macro", mc)


@dataclass(frozen=True)
class MutationConfig:
    param_std: float = 0.02
    hyper_log_std: float = 0.2
    macro_std: float = 0.02
    mask_flip_prob: Optional[float] = None  # None -> 1/len(mask)


def mutate(
    genome: Genome,
    rng: np.random.Generator,
    ids: IdSource,
    cfg: MutationConfig = MutationConfig(),
    mutate_params: bool = True,
) -> Genome:
    """Gaussian noise on params and macro actions, log-normal on hyperparams,
    independent bit flips on the mask. ``mutate_params=False`` passes the
    parameter vector through untouched (learned-parameter inheritance without
    noise)."""
    if mutate_params:
        vals = genome.params.values + rng.normal(0.0, cfg.param_std, len(genome.params))
    else:
        vals = genome.params.values.copy()
    hyper = genome.hyper.mutated(rng, cfg.hyper_log_std)
    mask = None
    if genome.mask is not None:
        p = cfg.mask_flip_prob
        if p is None:
            p = 1.0 / genome.mask.size
        flips = rng.random(genome.mask.size) < p
        mask = np.where(flips, 1 - genome.mask, genome.mask).astype(np.uint8)
    macro = None
    if genome.macro is not None:
        macro = genome.macro + rng.normal(0.0, cfg.macro_std, genome.macro.shape)
    return Genome(
        params=ParamVector(vals, genome.params.layout),
        hyper=hyper,
        id=ids.take(),
        parent_id=genome.id,
        mask=mask,
        macro=macro,
    )


@dataclass
class PopulationState:
    members: list[Genome]
    fitness: list[Optional[float]]
    generation: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        if len(self.members) != len(self.fitness):
            raise ContractError("one fitness slot per member")


def _tie_averaged_positions(sorted_values: np.ndarray) -> np.ndarray:
    """Mean position for each run of equal values in an already-sorted array."""
    n = sorted_values.shape[0]
    pos = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_values[j + 1] == sorted_values[i]:
            j += 1
        pos[i:j + 1] = 0.5 * (i + j)
        i = j + 1
    return pos


def linear_ranking_probs(fitnesses: np.ndarray, pressure: float = 1.5) -> np.ndarray:
    """Selection probabilities under linear ranking; ties share their mean
    rank so equal fitnesses get equal probability."""
    f = np.asarray(fitnesses, dtype=np.float64)
    n = f.shape[0]
    if n == 1:
        return np.ones(1)
    if not 1.0 <= pressure <= 2.0:
        raise ContractError("ranking pressure must lie in [1, 2]")
    f = np.where(np.isnan(f), -np.inf, f)
    order = np.argsort(f, kind="stable")
    ranks = np.empty(n)
    ranks[order] = _tie_averaged_positions(f[order])
    return (2.0 - pressure) / n + 2.0 * ranks * (pressure - 1.0) / (n * (n - 1))


def rank_select(
    fitnesses: np.ndarray,
    size,
    rng: np.random.Generator,
    pressure: float = 1.5,
) -> np.ndarray:
    """Draw parent indices under linear-ranking probabilities. ``size`` may
    be a tuple, e.g. (n, 2) for pairwise recombination schemes."""
    probs = linear_ranking_probs(np.asarray(fitnesses, dtype=np.float64), pressure)
    return rng.choice(probs.shape[0], size=size, p=probs)


def generational_step(
    pop: PopulationState,
    fitnesses: Sequence[Optional[float]],
    rng: np.random.Generator,
    ids: IdSource,
    cfg: MutationConfig = MutationConfig(),
    templates: Optional[Sequence[Genome]] = None,
    pressure: float = 1.5,
    elitism: int = 1,
    mutate_params: bool = True,
) -> PopulationState:
    """One synchronous generation: rank-select parents, mutate, keep the best
    ``elitism`` members unmutated. ``templates``, when given, are the
    per-member offspring sources (post-inheritance genomes); selection still
    ranks by the passed fitnesses."""
    n = len(pop.members)
    if len(fitnesses) != n:
        raise ContractError("fitness list length must match population size")
    if any(f is None for f in fitnesses):
        raise ContractError("unevaluated member in generational step")
    if templates is None:
        templates = pop.members
    f = np.asarray([float(x) for x in fitnesses])
    elite_idx = np.argsort(-np.where(np.isnan(f), -np.inf, f), kind="stable")[:elitism]
    members: list[Genome] = [templates[int(i)] for i in elite_idx]
    parent_idx = rank_select(f, n - elitism, rng, pressure)
    for pi in parent_idx:
        members.append(mutate(templates[int(pi)], rng, ids, cfg, mutate_params))
    return PopulationState(
        members=members,
        fitness=[None] * n,
        generation=pop.generation + 1,
        rng_seed=pop.rng_seed,
    )


@dataclass(frozen=True)
class SteadyStateInfo:
    tournament: np.ndarray
    winner: int
    loser: int
    child: Genome
    child_fitness: float


def steady_state_step(
    pop: PopulationState,
    rng: np.random.Generator,
    ids: IdSource,
    evaluate: Callable[[Genome], tuple[float, Genome]],
    cfg: MutationConfig = MutationConfig(),
    tournament_size: int = 10,
    mutate_params: bool = True,
) -> tuple[PopulationState, SteadyStateInfo]:
    """One asynchronous-GA step: uniform tournament without replacement, the
    winner's mutant is evaluated and replaces the tournament loser.

    ``evaluate`` returns (fitness, stored genome); the stored genome is what
    re-enters the population (it may carry learned parameters).
    """
    n = len(pop.members)
    if n < tournament_size:
        raise ContractError(
            f"population size {n} smaller than tournament size {tournament_size}"
        )
    if any(f is None for f in pop.fitness):
        raise ContractError("steady-state step requires a fully evaluated population")
    fit = np.asarray(pop.fitness, dtype=np.float64)
    fit = np.where(np.isnan(fit), -np.inf, fit)
    idx = rng.choice(n, size=tournament_size, replace=False)
    winner = int(idx[np.argmax(fit[idx])])
    loser = int(idx[np.argmin(fit[idx])])
    child = mutate(pop.members[winner], rng, ids, cfg, mutate_params)
    child_fitness, stored = evaluate(child)
    members = list(pop.members)
    fitness = list(pop.fitness)
    members[loser] = stored
    fitness[loser] = child_fitness
    new_pop = PopulationState(members, fitness, pop.generation + 1, pop.rng_seed)
    return new_pop, SteadyStateInfo(idx, winner, loser, child, child_fitness)


@dataclass
class SearchDistribution:
    """Separable Gaussian search distribution over a flat parameter vector."""

    mu: ParamVector
    sigma: np.ndarray
    eta_mu: float = 1.0
    eta_sigma: Optional[float] = None

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.sigma.shape != self.mu.values.shape:
            raise ContractError("sigma must have one entry per parameter")
        if not (self.sigma > 0).all():
            raise ContractError("sigma must be strictly positive")
        if self.eta_sigma is None:
            d = self.mu.values.size
            self.eta_sigma = (3.0 + np.log(d)) / (5.0 * np.sqrt(d))


def snes_utilities(fitnesses: Sequence[float]) -> np.ndarray:
    """Rank-based fitness shaping: log-linear utilities over descending rank,
    normalized to sum to zero. Ties share the mean utility of their span;
    non-finite fitnesses rank worst."""
    f = np.asarray(fitnesses, dtype=np.float64)
    n = f.shape[0]
    f = np.where(np.isfinite(f), f, -np.inf)
    base = np.maximum(0.0, np.log(n / 2.0 + 1.0) - np.log(np.arange(1, n + 1)))
    base = base / base.sum() - 1.0 / n
    order = np.argsort(-f, kind="stable")
    util = np.empty(n)
    sorted_f = f[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_f[j + 1] == sorted_f[i]:
            j += 1
        util[order[i:j + 1]] = base[i:j + 1].mean()
        i = j + 1
    return util


@dataclass(frozen=True)
class SnesInfo:
    fitnesses: np.ndarray
    mean_fitness: float
    best_fitness: float
    best_sample: np.ndarray


def snes_step(
    dist: SearchDistribution,
    rng: np.random.Generator,
    evaluate: Callable[[np.ndarray, int], float],
    pop_size: int = 25,
) -> tuple[SearchDistribution, SnesInfo]:
    """One natural-gradient update of the separable search distribution."""
    if pop_size < 2:
        raise ContractError("population size must be at least 2")
    d = dist.mu.values.size
    z = rng.standard_normal((pop_size, d))
    thetas = dist.mu.values[None, :] + dist.sigma[None, :] * z
    fits = np.array([float(evaluate(thetas[k], k)) for k in range(pop_size)])
    u = snes_utilities(fits)
    grad_mu = u @ z
    grad_sigma = u @ (z * z - 1.0)
    mu = ParamVector(
        dist.mu.values + dist.eta_mu * dist.sigma * grad_mu, dist.mu.layout
    )
    sigma = dist.sigma * np.exp(0.5 * dist.eta_sigma * grad_sigma)
    finite = np.isfinite(fits)
    best_k = int(np.argmax(np.where(finite, fits, -np.inf)))
    info = SnesInfo(
        fitnesses=fits,
        mean_fitness=float(fits[finite].mean()) if finite.any() else float("nan"),
        best_fitness=float(fits[best_k]) if finite.any() else float("nan"),
        best_sample=thetas[best_k],
    )
    return SearchDistribution(mu, sigma, dist.eta_mu, dist.eta_sigma), info
