"""Lifetime evaluation under the three inheritance rules.

A lifetime is a pass over a batch of tasks. What the offspring inherits is
what distinguishes the modes: initial parameters only (reset every episode),
the final learned parameters (episodes chain), or initial parameters with no
learning at all. Fitness is always the sum of per-episode scores.
"""

from __future__ import annotations

import dataclasses
import hashlib
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import ContractError
from .evolution import Genome
from .nets import ParamVector


class Kind(str, Enum):
    BALDWIN = "baldwin"
    LAMARCK = "lamarck"
    DARWIN = "darwin"


@dataclass(frozen=True)
class InheritanceMode:
    kind: Kind
    # False: learned parameters pass to the child without mutation noise
    lamarck_mutate_params: bool = True

    @property
    def resets_each_episode(self) -> bool:
        return self.kind is not Kind.LAMARCK


BALDWIN = InheritanceMode(Kind.BALDWIN)
LAMARCK = InheritanceMode(Kind.LAMARCK)
DARWIN = InheritanceMode(Kind.DARWIN)


@dataclass
class EvalReport:
    per_episode: list[tuple[object, float]]
    fitness: float
    post_params: ParamVector
    gradient_steps_taken: int


# Learner protocol: (genome, start_values, task, n_inner, rng)
#   -> (episode score, post-episode values, gradient steps taken)
Learner = Callable[
    [Genome, np.ndarray, object, int, np.random.Generator],
    tuple[float, np.ndarray, int],
]


def _seed_parts(task) -> tuple:
    fn = getattr(task, "seed_parts", None)
    if fn is not None:
        return tuple(fn())
    if dataclasses.is_dataclass(task):
        return dataclasses.astuple(task)
    raise ContractError(f"cannot derive a seed key from task {task!r}")


def content_key(parts: Sequence) -> list[int]:
    """Stable 128-bit key over primitive values, as four uint32 words."""
    h = hashlib.blake2b(digest_size=16)
    for p in parts:
        if isinstance(p, (bool, np.bool_)):
            h.update(b"b" + struct.pack("<q", int(p)))
        elif isinstance(p, (int, np.integer)):
            h.update(b"i" + struct.pack("<q", int(p)))
        elif isinstance(p, (float, np.floating)):
            h.update(b"f" + struct.pack("<d", float(p)))
        elif isinstance(p, str):
            h.update(b"s" + p.encode("utf-8"))
        elif isinstance(p, np.ndarray):
            h.update(b"a" + np.ascontiguousarray(p, dtype=np.float64).tobytes())
        elif isinstance(p, (tuple, list)):
            h.update(b"(")
            h.update(struct.pack("<q", sum(content_key(p))))
            h.update(b")")
        else:
            raise ContractError(f"unhashable seed part {p!r}")
        h.update(b"|")
    d = h.digest()
    return [int.from_bytes(d[i:i + 4], "little") for i in range(0, 16, 4)]


@dataclass(frozen=True)
class EpisodeSeeder:
    """Derives one RNG stream per (genome, task content, occurrence).

    Keying on task content rather than episode position keeps each episode's
    stream attached to its task when the batch is reordered, and makes
    parallel and sequential evaluation produce identical fitness.
    """

    run_seed: int

    def episode_rng(self, genome_id: int, task, occurrence: int) -> np.random.Generator:
        entropy = [self.run_seed & (2**63 - 1), genome_id & (2**63 - 1)]
        entropy.extend(content_key(_seed_parts(task)))
        entropy.append(occurrence)
        return np.random.default_rng(np.random.SeedSequence(entropy))


class FitnessFloor:
    """Penalty fitness for blown-up episodes: 10% below the worst finite
    score seen so far, or a fixed default before anything was observed."""

    def __init__(self, default: float = -1e9):
        self.default = default
        self._worst: Optional[float] = None

    def observe(self, score: float) -> None:
        if np.isfinite(score):
            if self._worst is None or score < self._worst:
                self._worst = float(score)

    @property
    def value(self) -> float:
        if self._worst is None:
            return self.default
        return self._worst - 0.1 * abs(self._worst)


def evaluate(
    genome: Genome,
    tasks: Sequence,
    mode: InheritanceMode,
    n_inner: int,
    learner: Learner,
    seeder: EpisodeSeeder,
    fitness_floor: float = -1e9,
) -> EvalReport:
    """Score a genome over one lifetime of episodes.

    Baldwin and Darwin start every episode from the genome's own parameters;
    Lamarck chains one evolving vector through the batch in order. A
    non-finite episode outcome is recorded as ``fitness_floor`` and, when
    parameters chain, the episode's parameter change is discarded so one bad
    episode cannot poison the rest of the lifetime.
    """
    if not tasks:
        raise ContractError("task batch must be non-empty")
    if n_inner < 0:
        raise ContractError("n_inner must be >= 0")
    if mode.kind is Kind.DARWIN and n_inner != 0:
        raise ContractError("no-learning mode requires n_inner = 0")

    start = genome.params.values
    current = start
    per_episode: list[tuple[object, float]] = []
    occurrences: dict[tuple, int] = {}
    steps_total = 0
    for k, task in enumerate(tasks):
        key = tuple(content_key(_seed_parts(task)))
        occ = occurrences.get(key, 0)
        occurrences[key] = occ + 1
        rng = seeder.episode_rng(genome.id, task, occ)
        init = start if mode.resets_each_episode else current
        # Overflow inside a lifetime is an anticipated outcome (chained
        # parameter updates can diverge); it is converted to the fitness
        # floor below, so the numpy warnings carry no information.
        with np.errstate(over="ignore", invalid="ignore"):
            score, post, steps = learner(genome, init, task, n_inner, rng)
        steps_total += steps
        ok = np.isfinite(score) and np.isfinite(post).all()
        if not ok:
            score = fitness_floor
            post = init
        label = getattr(task, "label", None)
        per_episode.append((label if label is not None else k, float(score)))
        if mode.kind is Kind.LAMARCK:
            current = post
    fitness = float(np.sum([s for _, s in per_episode]))
    if mode.kind is Kind.LAMARCK:
        post_params = ParamVector(np.asarray(current, dtype=np.float64), genome.params.layout)
    else:
        post_params = genome.params
    return EvalReport(per_episode, fitness, post_params, steps_total)


def inherit(report: EvalReport, genome: Genome, mode: InheritanceMode) -> Genome:
    """Pre-mutation offspring template: which parameter vector carries over."""
    if mode.kind is Kind.LAMARCK:
        params = report.post_params
    else:
        params = genome.params
    return Genome(
        params=params,
        hyper=genome.hyper,
        id=genome.id,
        parent_id=genome.parent_id,
        mask=genome.mask,
        macro=genome.macro,
    )


def evaluate_population(
    members: Sequence[Genome],
    tasks: Sequence,
    mode: InheritanceMode,
    n_inner: int,
    learner: Learner,
    seeder: EpisodeSeeder,
    fitness_floor: float = -1e9,
    workers: Optional[int] = None,
) -> list[EvalReport]:
    """Evaluate every member on the same task batch. ``workers`` switches to a
    thread pool; per-episode seeding makes the results identical either way."""
    def one(g: Genome) -> EvalReport:
        return evaluate(g, tasks, mode, n_inner, learner, seeder, fitness_floor)

    if workers is None or workers <= 1:
        return [one(g) for g in members]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, members))
