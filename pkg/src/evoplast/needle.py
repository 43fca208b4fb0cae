"""Needle-in-a-haystack: 20 alleles over {0, 1, ?}, where ? alleles do
random search during a lifetime of trials. Lifetime search turns the
single-spike landscape into a gradient that plain selection can climb,
which is the classic demonstration this module replays.

Alleles are int8 codes: 0, 1, and QUESTION (2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ContractError
from .evolution import rank_select
from .lifetime import Kind

N_ALLELES = 20
QUESTION = np.int8(2)
_VALUES = np.array([0, 1, 2], dtype=np.int8)


@dataclass(frozen=True, eq=False)
class AlleleGenome:
    alleles: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alleles, dtype=np.int8)
        if a.shape != (N_ALLELES,):
            raise ContractError(f"allele vector must have length {N_ALLELES}")
        if not np.isin(a, _VALUES).all():
            raise ContractError("alleles must be 0, 1, or ? (code 2)")
        object.__setattr__(self, "alleles", a)


@dataclass(frozen=True)
class NeedleConfig:
    p1: float = 0.25
    p0: float = 0.25
    pq: float = 0.5
    trials: int = 1000
    target: tuple[int, ...] = tuple([1] * N_ALLELES)

    def __post_init__(self):
        probs = (self.p1, self.p0, self.pq)
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12:
            raise ContractError("allele priors must be non-negative and sum to 1")
        if self.trials < 1:
            raise ContractError("trials must be positive")
        if len(self.target) != N_ALLELES or any(t not in (0, 1) for t in self.target):
            raise ContractError(f"target must be {N_ALLELES} bits")

    @property
    def target_array(self) -> np.ndarray:
        return np.array(self.target, dtype=np.int8)


def sample_population(cfg: NeedleConfig, pop_size: int, rng: np.random.Generator) -> np.ndarray:
    """(pop_size, 20) int8 alleles drawn from the priors."""
    return rng.choice(_VALUES, size=(pop_size, N_ALLELES), p=[cfg.p0, cfg.p1, cfg.pq])


def _fitness_from_first_match(g: int, trials: int) -> float:
    if g > trials:
        return 1.0
    return 1.0 + 19.0 * (trials - g) / trials


def needle_lifetime(genome: AlleleGenome, cfg: NeedleConfig, rng: np.random.Generator) -> float:
    """Lifetime score: 1 if any fixed allele is wrong; otherwise the earlier
    the ?-search first matches the target within cfg.trials, the closer to 20.

    The first matching trial of q independent fair coins per trial is
    geometric with p = 2^-q, so it is drawn directly instead of looping.
    """
    a = genome.alleles
    target = cfg.target_array
    fixed = a != QUESTION
    if (a[fixed] != target[fixed]).any():
        return 1.0
    q = int((~fixed).sum())
    if q == 0:
        return _fitness_from_first_match(1, cfg.trials)
    g = int(rng.geometric(2.0**-q))
    return _fitness_from_first_match(g, cfg.trials)


def darwin_score(genome: AlleleGenome, cfg: NeedleConfig) -> float:
    """No lifetime search: all-or-nothing on the exact fixed target."""
    a = genome.alleles
    if (a == QUESTION).any():
        return 1.0
    return 20.0 if (a == cfg.target_array).all() else 1.0


def _evaluate_rows(
    rows: np.ndarray, cfg: NeedleConfig, mode: Kind, rng: np.random.Generator
) -> np.ndarray:
    target = cfg.target_array
    is_q = rows == QUESTION
    wrong_fixed = (~is_q & (rows != target)).any(axis=1)
    if mode is Kind.DARWIN:
        exact = ~wrong_fixed & ~is_q.any(axis=1)
        return np.where(exact, 20.0, 1.0)
    q = is_q.sum(axis=1)
    g = rng.geometric(np.power(2.0, -q.astype(np.float64)))
    fit = np.where(g <= cfg.trials, 1.0 + 19.0 * (cfg.trials - g) / cfg.trials, 1.0)
    return np.where(wrong_fixed, 1.0, fit)


def mutate_rows(
    rows: np.ndarray, cfg: NeedleConfig, rng: np.random.Generator, rate: float = 1.0 / N_ALLELES
) -> np.ndarray:
    """Per-locus resampling from the priors with the given probability."""
    flips = rng.random(rows.shape) < rate
    fresh = rng.choice(_VALUES, size=rows.shape, p=[cfg.p0, cfg.p1, cfg.pq])
    return np.where(flips, fresh, rows)


def crossover_rows(a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Single-point crossover per pair: prefix from a, suffix from b."""
    points = rng.integers(1, N_ALLELES, size=a.shape[0])
    take_a = np.arange(N_ALLELES)[None, :] < points[:, None]
    return np.where(take_a, a, b)


@dataclass
class NeedleHistory:
    generation: np.ndarray
    best: np.ndarray
    mean: np.ndarray
    q_frequency: np.ndarray
    one_frequency: np.ndarray
    zero_frequency: np.ndarray


def run_needle_experiment(
    cfg: NeedleConfig,
    mode: Kind,
    pop_size: int = 1000,
    generations: int = 50,
    rng: np.random.Generator | None = None,
    crossover: bool = True,
    selection: str = "proportional",
    pressure: float = 1.5,
    elitism: int = 1,
    mutation_rate: float = 1.0 / N_ALLELES,
    population: np.ndarray | None = None,
    on_generation=None,
) -> tuple[NeedleHistory, np.ndarray]:
    """Generational GA over allele genomes; one history row per generation.

    ``crossover`` follows the original construction (pairs recombine before
    mutation). ``selection`` is fitness-proportional by default: with at most
    a handful of above-baseline genomes per generation, rank selection's
    bounded advantage (at most ``pressure`` expected offspring) cannot
    amplify carriers before drift loses them, and the population never
    accommodates. Proportional selection gives a fitness-19 genome roughly
    nineteen expected offspring, which is what makes the effect visible.
    ``selection="rank"`` keeps parity with the parameter-vector GA.

    ``on_generation(gen, fitnesses, rows)``, when given, fires after each
    generation's bookkeeping and before reproduction.
    """
    if mode not in (Kind.BALDWIN, Kind.DARWIN):
        raise ContractError("the needle task has no parameters to inherit: use baldwin or darwin")
    if selection not in ("proportional", "rank"):
        raise ContractError("selection must be 'proportional' or 'rank'")
    if rng is None:
        rng = np.random.default_rng()
    rows = sample_population(cfg, pop_size, rng) if population is None else population.copy()
    if rows.shape != (pop_size, N_ALLELES):
        raise ContractError("population shape must be (pop_size, 20)")
    hist = NeedleHistory(*(np.zeros(generations) for _ in range(6)))
    for gen in range(generations):
        fit = _evaluate_rows(rows, cfg, mode, rng)
        hist.generation[gen] = gen
        hist.best[gen] = fit.max()
        hist.mean[gen] = fit.mean()
        hist.q_frequency[gen] = float((rows == QUESTION).mean())
        hist.one_frequency[gen] = float((rows == 1).mean())
        hist.zero_frequency[gen] = float((rows == 0).mean())
        if on_generation is not None:
            on_generation(gen, fit, rows)
        if gen == generations - 1:
            break
        elite_idx = np.argsort(-fit, kind="stable")[:elitism]
        n_children = pop_size - elitism
        shape = (n_children, 2) if crossover else n_children
        if selection == "rank":
            parents = rank_select(fit, shape, rng, pressure)
        else:
            parents = rng.choice(pop_size, size=shape, p=fit / fit.sum())
        if crossover:
            children = crossover_rows(rows[parents[:, 0]], rows[parents[:, 1]], rng)
        else:
            children = rows[parents]
        children = mutate_rows(children, cfg, rng, mutation_rate)
        rows = np.concatenate([rows[elite_idx], children])
    return hist, rows


def accommodation_trend(
    hist: NeedleHistory, threshold: float = 10.0, window: int = 20, tol: float = 0.005
) -> bool:
    """True when, after the first generation whose best fitness clears the
    threshold, the trailing-window mean of ? frequency never rises by more
    than sampling noise (``tol``) and declines overall."""
    above = np.nonzero(hist.best > threshold)[0]
    if above.size == 0:
        return False
    start = int(above[0])
    q = hist.q_frequency
    means = np.array(
        [q[max(start, g - window + 1) : g + 1].mean() for g in range(start, q.shape[0])]
    )
    if means.shape[0] < 2:
        return False
    return bool((np.diff(means) <= tol).all() and means[-1] < means[0])
