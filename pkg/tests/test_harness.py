import csv
import json
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from evoplast import harness
from evoplast.autodiff import ContractError
from evoplast.config import ConfigError, ExperimentConfig
from evoplast.harness import (
    ADAPTATION_COLUMNS,
    GA_COLUMNS,
    NEEDLE_COLUMNS,
    compare_runs,
    comparison_text,
    run_experiment,
    write_comparison_csvs,
)


def tiny_needle(**over) -> ExperimentConfig:
    raw = dict(preset="needle", mode="baldwin", population=30, generations=4)
    raw.update(over)
    return ExperimentConfig(**raw)


def tiny_sine_ga(**over) -> ExperimentConfig:
    raw = dict(
        preset="sine-ga",
        population=4,
        generations=2,
        sine=dict(n_tasks=3, eval_tasks=2),
    )
    raw.update(over)
    return ExperimentConfig(**raw)


def tiny_rl(**over) -> ExperimentConfig:
    raw = dict(
        preset="rl-goaldir",
        mode="baldwin",
        population=8,
        generations=3,
        rl=dict(episode_len=40, rollout_len=20, torso=8, tournament_size=4),
    )
    raw.update(over)
    return ExperimentConfig(**raw)


def read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------- config


def test_unknown_keys_are_rejected():
    with pytest.raises(ValidationError):
        ExperimentConfig(preset="needle", mode="baldwin", bogus=1)
    with pytest.raises(ValidationError):
        ExperimentConfig(preset="sine-ga", sine=dict(nope=2))


def test_mode_constraints():
    with pytest.raises(ValidationError):
        ExperimentConfig(preset="rl-goalvel")  # mode required
    with pytest.raises(ValidationError):
        ExperimentConfig(preset="needle", mode="lamarck")
    with pytest.raises(ValidationError):
        ExperimentConfig(preset="sine-ga", mode="baldwin")


def test_cross_field_validation():
    with pytest.raises(ValidationError):
        ExperimentConfig(preset="rl-goalvel", mode="darwin", rl=dict(episode_len=50, rollout_len=40))
    with pytest.raises(ValidationError):
        ExperimentConfig(preset="sine-snes", sine=dict(snes_inner_lr=1.0))
    with pytest.raises(ValidationError):
        ExperimentConfig(preset="needle", mode="darwin", needle=dict(p1=0.5, p0=0.5, pq=0.5))


def test_resolved_fills_preset_defaults():
    cfg = ExperimentConfig(preset="sine-ga").resolved()
    assert (cfg.generations, cfg.population) == (2000, 100)
    cfg = ExperimentConfig(preset="needle", mode="darwin", generations=7).resolved()
    assert (cfg.generations, cfg.population) == (7, 1000)


# ------------------------------------------------------------ artifacts


def test_row_count_matches_generations(tmp_path):
    run_experiment(tiny_sine_ga(), tmp_path / "r")
    rows = read_rows(tmp_path / "r" / "generations.csv")
    assert len(rows) == 2
    assert list(rows[0].keys()) == GA_COLUMNS


def test_run_json_round_trip_reproduces_bytes(tmp_path):
    run_experiment(tiny_needle(), tmp_path / "a")
    cfg2 = ExperimentConfig(**json.loads((tmp_path / "a" / "run.json").read_text()))
    run_experiment(cfg2, tmp_path / "b")
    assert (tmp_path / "a" / "generations.csv").read_bytes() == (
        tmp_path / "b" / "generations.csv"
    ).read_bytes()


def test_sequential_runs_are_byte_identical(tmp_path):
    run_experiment(tiny_rl(), tmp_path / "a")
    run_experiment(tiny_rl(), tmp_path / "b")
    for name in ("generations.csv", "velocity_trace.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_parallel_evaluation_matches_sequential(tmp_path):
    run_experiment(tiny_sine_ga(), tmp_path / "seq")
    run_experiment(tiny_sine_ga(workers=3), tmp_path / "par")
    assert (tmp_path / "seq" / "generations.csv").read_bytes() == (
        tmp_path / "par" / "generations.csv"
    ).read_bytes()


def test_occupied_directory_is_refused(tmp_path):
    run_experiment(tiny_needle(), tmp_path / "r")
    with pytest.raises(ConfigError):
        run_experiment(tiny_needle(), tmp_path / "r")


def test_best_at_least_median_and_histograms_sum(tmp_path):
    run_experiment(tiny_rl(), tmp_path / "r")
    rows = read_rows(tmp_path / "r" / "generations.csv")
    hist_cols = [c for c in GA_COLUMNS if "_hist_" in c]
    assert len(hist_cols) == 60
    for row in rows:
        assert float(row["best_fitness"]) >= float(row["median_fitness"])
        for param in ("lr", "entropy", "discount"):
            total = sum(int(row[c]) for c in hist_cols if c.startswith(param + "_hist_"))
            assert total == 8


def test_needle_q_frequency_column(tmp_path):
    run_experiment(
        tiny_needle(population=1000, generations=2), tmp_path / "r"
    )
    rows = read_rows(tmp_path / "r" / "generations.csv")
    assert list(rows[0].keys()) == NEEDLE_COLUMNS
    assert abs(float(rows[0]["q_frequency"]) - 0.5) < 0.02


def test_adaptation_csv_shape(tmp_path):
    run_experiment(tiny_sine_ga(generations=3), tmp_path / "r")
    rows = read_rows(tmp_path / "r" / "adaptation.csv")
    assert list(rows[0].keys()) == ADAPTATION_COLUMNS
    assert len(ADAPTATION_COLUMNS) == 12
    assert len(rows) == 3  # one checkpoint per generation at this size
    for row in rows:
        for k in range(11):
            assert float(row[f"mse_k{k}"]) >= 0.0


def test_velocity_trace_covers_every_episode(tmp_path):
    cfg = tiny_rl(preset="rl-goalvel", mode="lamarck")
    run_experiment(cfg, tmp_path / "r")
    rows = read_rows(tmp_path / "r" / "velocity_trace.csv")
    assert len(rows) == 10 * 40
    tasks = [r["task"] for r in rows]
    assert len(set(tasks)) == 10
    steps = [int(r["step"]) for r in rows if r["task"] == tasks[0]]
    assert steps == list(range(40))


def test_interruption_preserves_completed_generations(tmp_path, monkeypatch):
    calls = {"n": 0}
    real = harness.generational_step

    def bomb(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 2:
            raise KeyboardInterrupt
        return real(*args, **kwargs)

    monkeypatch.setattr(harness, "generational_step", bomb)
    with pytest.raises(KeyboardInterrupt):
        run_experiment(tiny_sine_ga(generations=5), tmp_path / "r")
    rows = read_rows(tmp_path / "r" / "generations.csv")
    assert len(rows) == 2  # two generations finished before the interrupt


def test_timing_lives_outside_generations_csv(tmp_path):
    run_experiment(tiny_needle(), tmp_path / "r")
    assert "wall_ms" not in read_rows(tmp_path / "r" / "generations.csv")[0]
    timing = read_rows(tmp_path / "r" / "timing.csv")
    assert [int(r["generation"]) for r in timing] == [0, 1, 2, 3]
    assert all(int(r["wall_ms"]) >= 0 for r in timing)


# -------------------------------------------------------------- compare


def test_compare_run_with_itself_has_zero_differences(tmp_path):
    run_experiment(tiny_needle(), tmp_path / "a")
    run_experiment(tiny_needle(), tmp_path / "b")
    comp = compare_runs([tmp_path / "a", tmp_path / "b"])
    for g in comp.generations:
        assert comp.best["a"][g] == comp.best["b"][g]
    assert [r["rank"] for r in comp.ranking] == [1, 2]


def test_compare_refuses_mixed_families(tmp_path):
    run_experiment(tiny_needle(), tmp_path / "n")
    run_experiment(tiny_sine_ga(), tmp_path / "s")
    with pytest.raises(ConfigError, match="famil"):
        compare_runs([tmp_path / "n", tmp_path / "s"])


def test_compare_names_missing_file(tmp_path):
    missing = tmp_path / "ghost"
    with pytest.raises(ConfigError, match=str(missing)):
        compare_runs([missing])


def test_sine_presets_share_a_family(tmp_path):
    run_experiment(tiny_sine_ga(), tmp_path / "ga")
    run_experiment(
        ExperimentConfig(
            preset="sine-maml",
            population=3,
            generations=2,
            maml=dict(probe_tasks=2),
            sine=dict(eval_tasks=2),
        ),
        tmp_path / "maml",
    )
    comp = compare_runs([tmp_path / "ga", tmp_path / "maml"])
    assert comp.family == "sine"
    assert len(comp.ranking) == 2


def test_ranking_lists_all_modes_with_seeds(tmp_path):
    for mode, seed in (("baldwin", 0), ("lamarck", 1), ("darwin", 2)):
        run_experiment(tiny_rl(mode=mode, seed=seed), tmp_path / mode)
    comp = compare_runs([tmp_path / m for m in ("baldwin", "lamarck", "darwin")])
    assert {r["mode"] for r in comp.ranking} == {"baldwin", "lamarck", "darwin"}
    assert {r["seed"] for r in comp.ranking} == {0, 1, 2}
    finals = [r["final_best_fitness"] for r in comp.ranking]
    assert finals == sorted(finals, reverse=True)


def test_compare_csvs_and_timepoint_downsampling(tmp_path):
    run_experiment(tiny_rl(generations=4), tmp_path / "a")
    run_experiment(tiny_rl(generations=4, seed=5), tmp_path / "b")
    comp = compare_runs([tmp_path / "a", tmp_path / "b"])
    paths = write_comparison_csvs(comp, tmp_path / "out")
    names = {p.name for p in paths}
    assert names == {"compare.csv", "ranking.csv", "hyper_timepoints.csv"}
    table = read_rows(tmp_path / "out" / "compare.csv")
    assert [int(r["generation"]) for r in table] == comp.generations
    tp = read_rows(tmp_path / "out" / "hyper_timepoints.csv")
    per_run_gens = {
        (r["run"], r["parameter"]): set() for r in tp
    }
    for r in tp:
        per_run_gens[(r["run"], r["parameter"])].add(int(r["generation"]))
    for gens in per_run_gens.values():
        assert len(gens) <= 25
    text = comparison_text(comp)
    assert "final best fitness" in text and "a" in text


def test_duplicate_run_names_are_disambiguated(tmp_path):
    run_experiment(tiny_needle(), tmp_path / "x" / "r")
    run_experiment(tiny_needle(seed=1), tmp_path / "y" / "r")
    comp = compare_runs([tmp_path / "x" / "r", tmp_path / "y" / "r"])
    assert [v.name for v in comp.views] == ["r", "r#2"]


# ----------------------------------------------------- generation record


def valid_hyper(population: int) -> tuple:
    per_field = [0.5, 0.1] + [0] * (harness.HIST_BINS - 1) + [population]
    return tuple(per_field * len(harness.HYPER_FIELDS))


def test_generation_record_rejects_best_below_median():
    with pytest.raises(ContractError, match="below median"):
        harness.GenerationRecord(0, best_fitness=-2.0, median_fitness=-1.0)


def test_generation_record_checks_histogram_coverage():
    hyper = valid_hyper(12)
    harness.GenerationRecord(3, 1.0, 0.0, hyper=hyper, population=12)
    with pytest.raises(ContractError, match="covers 12 of 13"):
        harness.GenerationRecord(3, 1.0, 0.0, hyper=hyper, population=13)
    with pytest.raises(ContractError, match="arity"):
        harness.GenerationRecord(3, 1.0, 0.0, hyper=hyper[:-1], population=12)


def test_generation_record_row_ordering():
    rec = harness.GenerationRecord(
        7, 2.0, 1.0, hyper=valid_hyper(4), extra=(0.25,), wall_ms=9, population=4
    )
    row = rec.row()
    assert row[:3] == [7, 2.0, 1.0]
    assert row[3:-1] == list(valid_hyper(4))
    assert row[-1] == 0.25
    assert rec.wall_ms == 9
