"""Seeded experiment runner: turns an ExperimentConfig into a run directory.

Artifacts per run:
  run.json           resolved configuration (feeding it back reproduces the run)
  generations.csv    one row per generation, column order fixed per preset
  timing.csv         wall clock per generation, kept apart so generations.csv
                     is byte-identical across reruns and worker counts
  adaptation.csv     sine presets: held-out MSE after k = 0..10 inner steps,
                     at up to 25 evenly spaced generations
  velocity_trace.csv control presets: per-step velocity of the final best
                     genome, one episode per task in the family

Floats are written with repr so identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from .autodiff import ContractError
from .config import (
    ConfigError,
    ExperimentConfig,
    SINE_PRESETS,
)
from .evolution import (
    DISCOUNT_RANGE,
    ENTROPY_SCALE_RANGE,
    LEARNING_RATE_RANGE,
    Genome,
    Hyperparams,
    IdSource,
    MutationConfig,
    PopulationState,
    SearchDistribution,
    generational_step,
    sample_hyperparams,
    snes_step,
    steady_state_step,
)
from .fastmlp import FlatMLP
from .lifetime import BALDWIN, DARWIN, LAMARCK, EpisodeSeeder, Kind, inherit
from .maml import MamlConfig, adapt_and_eval, maml_outer_step, pretrain_step, sine_task_sampler
from .needle import QUESTION, NeedleConfig, run_needle_experiment
from .nets import ParamVector, a2c_arch, init_params, param_count, sine_arch
from .rl import (
    N_ACTIONS,
    A2CConfig,
    EnvConfig,
    Rollout,
    a2c_update,
    env_observe,
    env_reset,
    env_step,
    make_tasks,
    rl_fitness,
    select_action,
)
from .sine import (
    AMPLITUDE_RANGE,
    PHASE_RANGE,
    SineTask,
    adaptation_curve,
    sample_batch,
    sine_fitness,
)

MODES = {"baldwin": BALDWIN, "lamarck": LAMARCK, "darwin": DARWIN}

HYPER_FIELDS = (
    ("lr", "learning_rate", LEARNING_RATE_RANGE, "log"),
    ("entropy", "entropy_scale", ENTROPY_SCALE_RANGE, "log"),
    ("discount", "discount", DISCOUNT_RANGE, "linear"),
)
HIST_BINS = 20

_BIN_EDGES = {
    name: (
        np.geomspace(lo, hi, HIST_BINS + 1)
        if scale == "log"
        else np.linspace(lo, hi, HIST_BINS + 1)
    )
    for name, _, (lo, hi), scale in HYPER_FIELDS
}


def hyper_columns() -> list[str]:
    cols: list[str] = []
    for name, _, _, _ in HYPER_FIELDS:
        cols += [f"{name}_mean", f"{name}_std"]
        cols += [f"{name}_hist_{i}" for i in range(HIST_BINS)]
    return cols


def hyper_summary(hypers: Sequence[Hyperparams]) -> list:
    """Mean, std and a 20-bin histogram over the legal range, per field.
    Values are clamped to the range at construction, so counts always sum
    to the population size."""
    out: list = []
    for name, attr, _, _ in HYPER_FIELDS:
        vals = np.array([getattr(h, attr) for h in hypers])
        counts, _ = np.histogram(vals, bins=_BIN_EDGES[name])
        out += [float(vals.mean()), float(vals.std())]
        out += [int(c) for c in counts]
    return out


BASE_COLUMNS = ["generation", "best_fitness", "median_fitness"]
GA_COLUMNS = BASE_COLUMNS + hyper_columns()
SNES_COLUMNS = BASE_COLUMNS + ["sigma_mean", "sigma_std"]
GRAD_COLUMNS = BASE_COLUMNS
NEEDLE_COLUMNS = BASE_COLUMNS + ["q_frequency", "one_frequency", "zero_frequency"]
TIMING_COLUMNS = ["generation", "wall_ms"]
ADAPTATION_COLUMNS = ["generation"] + [f"mse_k{k}" for k in range(11)]
TRACE_COLUMNS = ["task", "step", "velocity", "reward"]


@dataclass(frozen=True)
class GenerationRecord:
    """One generation's logged summary, validated at construction.

    ``hyper`` carries the flattened per-hyperparameter summary in
    HYPER_FIELDS order (mean, std, then the 20 bin counts); ``extra`` holds
    any preset-specific trailing columns (SNES sigma stats, needle allele
    frequencies). ``population`` enables the histogram-coverage check and
    is None for presets that log no hyperparameter histograms.
    """

    generation: int
    best_fitness: float
    median_fitness: float
    hyper: tuple = ()
    extra: tuple = ()
    wall_ms: int = 0
    population: Optional[int] = None

    def __post_init__(self):
        if self.best_fitness < self.median_fitness:
            raise ContractError(
                f"generation {self.generation}: best fitness "
                f"{self.best_fitness} below median {self.median_fitness}"
            )
        if self.hyper and self.population is not None:
            per = 2 + HIST_BINS
            if len(self.hyper) != per * len(HYPER_FIELDS):
                raise ContractError("hyperparameter summary has the wrong arity")
            for idx, (name, _, _, _) in enumerate(HYPER_FIELDS):
                counts = self.hyper[idx * per + 2 : (idx + 1) * per]
                if int(sum(counts)) != self.population:
                    raise ContractError(
                        f"generation {self.generation}: {name} histogram covers "
                        f"{int(sum(counts))} of {self.population} members"
                    )

    def row(self) -> list:
        return [self.generation, self.best_fitness, self.median_fitness,
                *self.hyper, *self.extra]

ADAPTATION_CHECKPOINTS = 25
COMPARE_TIMEPOINTS = 25


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


class _CsvLog:
    """Row-at-a-time CSV writer, flushed per row so an interrupted run keeps
    every completed generation."""

    def __init__(self, path: Path, header: Sequence[str]):
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(header)
        self._fh.flush()

    def row(self, values: Sequence) -> None:
        self._w.writerow([_fmt(v) for v in values])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "_CsvLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    """Order-preserving map; a thread pool when workers > 1. Results come
    back in member order either way, so downstream aggregates match."""
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _streams(seed: int):
    """Independent per-purpose generators: init draws, per-generation task
    batches, the evolution loop, and a SeedSequence for evaluation draws."""
    init, batch, loop, ev = np.random.SeedSequence(seed).spawn(4)
    return (
        np.random.default_rng(init),
        np.random.default_rng(batch),
        np.random.default_rng(loop),
        ev,
    )


def _checkpoints(generations: int, k: int = ADAPTATION_CHECKPOINTS) -> set[int]:
    return {int(round(g)) for g in np.linspace(0, generations - 1, min(k, generations))}


def run_experiment(config: ExperimentConfig, out_dir) -> ExperimentConfig:
    """Execute one run into ``out_dir``; returns the resolved config.

    Raises ConfigError for unusable inputs (directory already holds a run)
    and lets runtime failures propagate; rows written before a failure stay
    on disk.
    """
    cfg = config.resolved()
    out = Path(out_dir)
    if (out / "generations.csv").exists():
        raise ConfigError(f"{out} already holds a run (generations.csv present); pick a fresh directory")
    out.mkdir(parents=True, exist_ok=True)
    doc = json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True)
    (out / "run.json").write_text(doc + "\n")
    runner = {
        "sine-ga": _run_sine_ga,
        "sine-snes": _run_sine_snes,
        "sine-maml": lambda c, o: _run_sine_grad(c, o, pretrained=False),
        "sine-pretrained": lambda c, o: _run_sine_grad(c, o, pretrained=True),
        "rl-goalvel": _run_rl,
        "rl-goaldir": _run_rl,
        "needle": _run_needle,
    }[cfg.preset]
    runner(cfg, out)
    return cfg


# ------------------------------------------------------------------ sine


def _mutation_config(cfg: ExperimentConfig) -> MutationConfig:
    m = cfg.mutation
    return MutationConfig(m.param_std, m.hyper_log_std, m.macro_std, m.mask_flip_prob)


def _run_sine_ga(cfg: ExperimentConfig, out: Path) -> None:
    s = cfg.sine
    x_range = (s.x_min, s.x_max)
    rng_init, rng_batch, rng_loop, ss_eval = _streams(cfg.seed)
    arch = sine_arch()
    ids = IdSource()
    mask = np.ones(param_count(arch), np.uint8) if cfg.mask_enabled else None
    members = [
        Genome(init_params(arch, rng_init), sample_hyperparams(rng_init), ids.take(), mask=mask)
        for _ in range(cfg.population)
    ]
    pop = PopulationState(members, [None] * cfg.population)
    mut = _mutation_config(cfg)
    eval_batch = sample_batch(
        np.random.default_rng(ss_eval), s.eval_tasks, s.k_train, s.k_test, x_range
    )
    cps = _checkpoints(cfg.generations)
    with _CsvLog(out / "generations.csv", GA_COLUMNS) as gens, _CsvLog(
        out / "timing.csv", TIMING_COLUMNS
    ) as timing, _CsvLog(out / "adaptation.csv", ADAPTATION_COLUMNS) as adapt:
        for gen in range(cfg.generations):
            t0 = time.perf_counter()
            batch = sample_batch(rng_batch, s.n_tasks, s.k_train, s.k_test, x_range)
            fits = _map(lambda g: sine_fitness(g, batch, s.n_inner), pop.members, cfg.workers)
            best_i = int(np.argmax(fits))
            if gen in cps:
                curve = adaptation_curve(pop.members[best_i], eval_batch, 10)
                adapt.row([gen] + [float(v) for v in curve])
            rec = GenerationRecord(
                gen,
                fits[best_i],
                float(np.median(fits)),
                tuple(hyper_summary([g.hyper for g in pop.members])),
                wall_ms=int(1000 * (time.perf_counter() - t0)),
                population=cfg.population,
            )
            gens.row(rec.row())
            timing.row([rec.generation, rec.wall_ms])
            if gen < cfg.generations - 1:
                pop = generational_step(
                    pop, fits, rng_loop, ids, mut,
                    pressure=cfg.ga.pressure, elitism=cfg.ga.elitism,
                )


def _run_sine_snes(cfg: ExperimentConfig, out: Path) -> None:
    s = cfg.sine
    x_range = (s.x_min, s.x_max)
    rng_init, rng_batch, rng_loop, ss_eval = _streams(cfg.seed)
    arch = sine_arch()
    mu = init_params(arch, rng_init)
    dist = SearchDistribution(mu, np.full(mu.values.size, s.snes_sigma))
    hyper = Hyperparams(learning_rate=s.snes_inner_lr)
    mask = np.ones(param_count(arch), np.uint8) if cfg.mask_enabled else None
    eval_batch = sample_batch(
        np.random.default_rng(ss_eval), s.eval_tasks, s.k_train, s.k_test, x_range
    )
    cps = _checkpoints(cfg.generations)
    with _CsvLog(out / "generations.csv", SNES_COLUMNS) as gens, _CsvLog(
        out / "timing.csv", TIMING_COLUMNS
    ) as timing, _CsvLog(out / "adaptation.csv", ADAPTATION_COLUMNS) as adapt:
        for gen in range(cfg.generations):
            t0 = time.perf_counter()
            batch = sample_batch(rng_batch, s.n_tasks, s.k_train, s.k_test, x_range)

            def ev(theta: np.ndarray, k: int) -> float:
                g = Genome(ParamVector(theta, mu.layout), hyper, k, mask=mask)
                return sine_fitness(g, batch, s.n_inner)

            dist, info = snes_step(dist, rng_loop, ev, cfg.population)
            if gen in cps:
                g = Genome(ParamVector(info.best_sample, mu.layout), hyper, 0, mask=mask)
                adapt.row([gen] + [float(v) for v in adaptation_curve(g, eval_batch, 10)])
            rec = GenerationRecord(
                gen,
                info.best_fitness,
                float(np.median(info.fitnesses)),
                extra=(float(dist.sigma.mean()), float(dist.sigma.std())),
                wall_ms=int(1000 * (time.perf_counter() - t0)),
            )
            gens.row(rec.row())
            timing.row([rec.generation, rec.wall_ms])


def _run_sine_grad(cfg: ExperimentConfig, out: Path, pretrained: bool) -> None:
    s, m = cfg.sine, cfg.maml
    x_range = (s.x_min, s.x_max)
    rng_init, _, rng_loop, ss_eval = _streams(cfg.seed)
    arch = sine_arch()
    theta = init_params(arch, rng_init)
    mcfg = MamlConfig(
        alpha=m.alpha,
        beta=m.beta,
        meta_batch=cfg.population,
        k_shot=m.k_shot,
        n_inner_train=m.n_inner_train,
        n_inner_eval=m.n_inner_eval,
    )
    sampler = sine_task_sampler(mcfg, x_range)
    ss_probe_tasks, ss_probe = ss_eval.spawn(2)
    rng_pt = np.random.default_rng(ss_probe_tasks)
    probe_tasks = [_draw_task(rng_pt) for _ in range(m.probe_tasks)]
    eval_tasks = [_draw_task(rng_pt) for _ in range(s.eval_tasks)]
    probe_seeds = ss_probe.spawn(cfg.generations)
    cps = _checkpoints(cfg.generations)
    with _CsvLog(out / "generations.csv", GRAD_COLUMNS) as gens, _CsvLog(
        out / "timing.csv", TIMING_COLUMNS
    ) as timing, _CsvLog(out / "adaptation.csv", ADAPTATION_COLUMNS) as adapt:
        for gen in range(cfg.generations):
            t0 = time.perf_counter()
            if pretrained:
                theta = pretrain_step(theta, mcfg, sampler, rng_loop)
            else:
                theta = maml_outer_step(theta, mcfg, sampler, rng_loop)
            rng_probe = np.random.default_rng(probe_seeds[gen])
            mse = float(
                np.mean(
                    [
                        adapt_and_eval(theta, t, m.k_shot, m.n_inner_eval, m.alpha, rng_probe, x_range, arch)
                        for t in probe_tasks
                    ]
                )
            )
            if gen in cps:
                adapt.row([gen] + _grad_curve(theta, eval_tasks, m, cfg.seed, gen, x_range, arch))
            rec = GenerationRecord(
                gen, -mse, -mse, wall_ms=int(1000 * (time.perf_counter() - t0))
            )
            gens.row(rec.row())
            timing.row([rec.generation, rec.wall_ms])


def _draw_task(rng: np.random.Generator) -> SineTask:
    return SineTask(rng.uniform(*AMPLITUDE_RANGE), rng.uniform(*PHASE_RANGE))


def _grad_curve(theta, tasks, m, seed: int, gen: int, x_range, arch) -> list[float]:
    """Held-out MSE after k = 0..10 inner steps. Each task reuses one seed
    across k so every point on the curve sees the same shots."""
    curve = []
    for k in range(11):
        per_task = []
        for ti, task in enumerate(tasks):
            rng = np.random.default_rng(np.random.SeedSequence([seed & (2**63 - 1), 13, gen, ti]))
            per_task.append(adapt_and_eval(theta, task, m.k_shot, k, m.alpha, rng, x_range, arch))
        curve.append(float(np.mean(per_task)))
    return curve


# -------------------------------------------------------------- control


def _rl_member(rng, arch, env_cfg, ids, init_std, macro_std, mask_enabled) -> Genome:
    params = init_params(arch, rng, init_std)
    hyper = sample_hyperparams(rng)
    macro = rng.normal(0.0, macro_std, (N_ACTIONS, env_cfg.actuators))
    mask = np.ones(param_count(arch), np.uint8) if mask_enabled else None
    return Genome(params, hyper, ids.take(), mask=mask, macro=macro)


def _run_rl(cfg: ExperimentConfig, out: Path) -> None:
    r = cfg.rl
    kind = "velocity" if cfg.preset == "rl-goalvel" else "direction"
    mode = MODES[cfg.mode]
    env_cfg = EnvConfig(
        damping=r.damping,
        dt=r.dt,
        gains=tuple(r.gains),
        episode_len=r.episode_len,
        pos_scale=r.pos_scale,
    )
    a2c = A2CConfig(r.rollout_len, r.value_loss_coeff, r.reward_scale)
    arch = a2c_arch(torso=r.torso)
    seeder = EpisodeSeeder(cfg.seed)
    rng_init, _, rng_loop, _ = _streams(cfg.seed)
    ids = IdSource()
    members = [
        _rl_member(rng_init, arch, env_cfg, ids, r.init_std, r.macro_init_std, cfg.mask_enabled)
        for _ in range(cfg.population)
    ]
    mut = _mutation_config(cfg)

    def score(g: Genome):
        return rl_fitness(g, kind, mode, seeder, env_cfg, a2c, arch)

    def eval_child(child: Genome):
        rep = score(child)
        return rep.fitness, inherit(rep, child, mode)

    reports = _map(score, members, cfg.workers)
    pop = PopulationState(
        [inherit(rep, g, mode) for rep, g in zip(reports, members)],
        [rep.fitness for rep in reports],
    )
    with _CsvLog(out / "generations.csv", GA_COLUMNS) as gens, _CsvLog(
        out / "timing.csv", TIMING_COLUMNS
    ) as timing:
        t0 = time.perf_counter()

        def log(gen: int, started: float) -> None:
            rec = GenerationRecord(
                gen,
                float(np.max(pop.fitness)),
                float(np.median(pop.fitness)),
                tuple(hyper_summary([g.hyper for g in pop.members])),
                wall_ms=int(1000 * (time.perf_counter() - started)),
                population=cfg.population,
            )
            gens.row(rec.row())
            timing.row([rec.generation, rec.wall_ms])

        log(0, t0)
        for gen in range(1, cfg.generations):
            t0 = time.perf_counter()
            for _ in range(cfg.population):
                pop, _ = steady_state_step(
                    pop, rng_loop, ids, eval_child, mut, r.tournament_size
                )
            log(gen, t0)
    best = pop.members[int(np.argmax(pop.fitness))]
    with _CsvLog(out / "velocity_trace.csv", TRACE_COLUMNS) as trace:
        for row in _trace_episodes(best, kind, mode, seeder, env_cfg, a2c, arch):
            trace.row(row)


def _trace_episodes(genome, kind, mode, seeder, env_cfg, a2c_cfg, arch):
    """Replay the genome's lifetime through the step-by-step env API,
    recording velocity and reward per step. Mirrors the evaluation loop:
    same per-episode seeds, same update cadence, same mode semantics.

    Runs with overflow warnings suppressed for the same reason evaluation
    does: chained or high-learning-rate lifetimes can blow up the net
    mid-episode, the env zeroes non-finite torques, and the trace should
    record that collapse rather than warn about it."""
    mlp = FlatMLP(arch)
    n_inner = 0 if mode.kind is Kind.DARWIN else 1
    T = a2c_cfg.rollout_len
    start = genome.params.values
    current = start
    occurrences: dict[tuple, int] = {}
    rows = []
    for task in make_tasks(kind):
        key = (task.kind, task.value)
        occ = occurrences.get(key, 0)
        occurrences[key] = occ + 1
        rng = seeder.episode_rng(genome.id, task, occ)
        values = start if mode.resets_each_episode else current
        params = ParamVector(values, genome.params.layout)
        env = env_reset(env_cfg, task)
        obs = env_observe(env)
        obs_buf = np.empty((T, obs.shape[0]))
        act_buf = np.empty(T, dtype=np.intp)
        rew_buf = np.empty(T)
        i = 0
        with np.errstate(over="ignore", invalid="ignore"):
            for step in range(env_cfg.episode_len):
                probs = mlp.act(params.values, obs)["policy"]
                a, torques = select_action(probs, genome.macro, rng)
                obs_buf[i] = obs
                act_buf[i] = a
                env, obs, reward = env_step(env, torques)
                rew_buf[i] = reward
                rows.append((task.label, step, env.velocity, reward))
                i += 1
                if i == T:
                    if n_inner > 0:
                        rollout = Rollout(obs_buf, act_buf, rew_buf, obs.copy())
                        params, _ = a2c_update(params, rollout, a2c_cfg, genome.hyper, arch, genome.mask)
                    i = 0
        current = params.values
    return rows


# --------------------------------------------------------------- needle


def _run_needle(cfg: ExperimentConfig, out: Path) -> None:
    n = cfg.needle
    ncfg = NeedleConfig(p1=n.p1, p0=n.p0, pq=n.pq, trials=n.trials)
    kind = Kind.BALDWIN if cfg.mode == "baldwin" else Kind.DARWIN
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    with _CsvLog(out / "generations.csv", NEEDLE_COLUMNS) as gens, _CsvLog(
        out / "timing.csv", TIMING_COLUMNS
    ) as timing:
        clock = {"t0": time.perf_counter()}

        def on_generation(gen: int, fits: np.ndarray, rows: np.ndarray) -> None:
            rec = GenerationRecord(
                gen,
                float(fits.max()),
                float(np.median(fits)),
                extra=(
                    float((rows == QUESTION).mean()),
                    float((rows == 1).mean()),
                    float((rows == 0).mean()),
                ),
                wall_ms=int(1000 * (time.perf_counter() - clock["t0"])),
            )
            gens.row(rec.row())
            timing.row([rec.generation, rec.wall_ms])
            clock["t0"] = time.perf_counter()

        run_needle_experiment(
            ncfg,
            kind,
            cfg.population,
            cfg.generations,
            rng,
            crossover=n.crossover,
            selection=n.selection,
            pressure=n.pressure,
            elitism=n.elitism,
            mutation_rate=n.mutation_rate,
            on_generation=on_generation,
        )


# -------------------------------------------------------------- compare


def _family(preset: str) -> str:
    return "sine" if preset in SINE_PRESETS else preset


@dataclass
class RunView:
    name: str
    path: Path
    config: ExperimentConfig
    header: list[str]
    rows: list[dict[str, str]]


@dataclass
class Comparison:
    family: str
    views: list[RunView]
    generations: list[int]
    best: dict[str, dict[int, float]]
    ranking: list[dict] = field(default_factory=list)
    timepoints: list[dict] = field(default_factory=list)


def load_run(run_dir) -> RunView:
    d = Path(run_dir)
    run_json = d / "run.json"
    gen_csv = d / "generations.csv"
    for p in (run_json, gen_csv):
        if not p.exists():
            raise ConfigError(f"missing run file: {p}")
    try:
        config = ExperimentConfig(**json.loads(run_json.read_text()))
    except (ValidationError, ValueError) as e:
        raise ConfigError(f"unreadable config in {run_json}: {e}") from e
    with open(gen_csv, newline="") as fh:
        reader = csv.DictReader(fh)
        header = list(reader.fieldnames or [])
        rows = list(reader)
    if not rows:
        raise ConfigError(f"no generation rows in {gen_csv}")
    return RunView(d.name, d, config, header, rows)


def compare_runs(run_dirs: Sequence) -> Comparison:
    if not run_dirs:
        raise ConfigError("compare needs at least one run directory")
    views = [load_run(d) for d in run_dirs]
    families = sorted({_family(v.config.preset) for v in views})
    if len(families) > 1:
        raise ConfigError(
            f"runs mix preset families {families}; compare runs from one family"
        )
    seen: dict[str, int] = {}
    for v in views:
        k = seen.get(v.name, 0)
        seen[v.name] = k + 1
        if k:
            v.name = f"{v.name}#{k + 1}"
    best: dict[str, dict[int, float]] = {}
    gen_union: set[int] = set()
    for v in views:
        series = {int(r["generation"]): float(r["best_fitness"]) for r in v.rows}
        best[v.name] = series
        gen_union.update(series)
    generations = sorted(gen_union)
    comp = Comparison(families[0], views, generations, best)
    finals = []
    for v in views:
        last_gen = max(best[v.name])
        finals.append(
            {
                "run": v.name,
                "preset": v.config.preset,
                "mode": v.config.mode or "",
                "seed": v.config.seed,
                "final_best_fitness": best[v.name][last_gen],
            }
        )
    finals.sort(key=lambda r: (-r["final_best_fitness"], r["run"]))
    for rank, row in enumerate(finals, start=1):
        comp.ranking.append({"rank": rank, **row})
    for v in views:
        hist_cols = [c for c in v.header if "_hist_" in c]
        if not hist_cols:
            continue
        idx = {int(round(i)) for i in np.linspace(0, len(v.rows) - 1, min(COMPARE_TIMEPOINTS, len(v.rows)))}
        for i in sorted(idx):
            r = v.rows[i]
            for c in hist_cols:
                param, bin_i = c.rsplit("_hist_", 1)
                comp.timepoints.append(
                    {
                        "run": v.name,
                        "generation": int(r["generation"]),
                        "parameter": param,
                        "bin": int(bin_i),
                        "count": int(r[c]),
                    }
                )
    return comp


def comparison_text(comp: Comparison, max_rows: int = 26) -> str:
    names = [v.name for v in comp.views]
    width = max(12, max(len(n) for n in names) + 2)
    lines = []
    head = "generation".ljust(12) + "".join(n.rjust(width) for n in names)
    lines.append(head)
    gens = comp.generations
    if len(gens) > max_rows:
        keep = sorted({gens[int(round(i))] for i in np.linspace(0, len(gens) - 1, max_rows)})
    else:
        keep = gens
    for g in keep:
        cells = []
        for n in names:
            v = comp.best[n].get(g)
            cells.append(("-" if v is None else f"{v:.6g}").rjust(width))
        lines.append(str(g).ljust(12) + "".join(cells))
    lines.append("")
    lines.append("final best fitness (ranked):")
    for r in comp.ranking:
        mode = f" mode={r['mode']}" if r["mode"] else ""
        lines.append(
            f"  {r['rank']}. {r['run']}  preset={r['preset']}{mode} seed={r['seed']}"
            f"  final_best={r['final_best_fitness']:.6g}"
        )
    return "\n".join(lines) + "\n"


def write_comparison_csvs(comp: Comparison, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = [v.name for v in comp.views]
    paths = []
    p = out / "compare.csv"
    with _CsvLog(p, ["generation"] + names) as log:
        for g in comp.generations:
            log.row([g] + [
                "" if comp.best[n].get(g) is None else comp.best[n][g] for n in names
            ])
    paths.append(p)
    p = out / "ranking.csv"
    with _CsvLog(p, ["rank", "run", "preset", "mode", "seed", "final_best_fitness"]) as log:
        for r in comp.ranking:
            log.row([r["rank"], r["run"], r["preset"], r["mode"], r["seed"], r["final_best_fitness"]])
    paths.append(p)
    if comp.timepoints:
        p = out / "hyper_timepoints.csv"
        with _CsvLog(p, ["run", "generation", "parameter", "bin", "count"]) as log:
            for r in comp.timepoints:
                log.row([r["run"], r["generation"], r["parameter"], r["bin"], r["count"]])
        paths.append(p)
    return paths
