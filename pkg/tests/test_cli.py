import json

import pytest

from evoplast import cli


def write_config(tmp_path, raw, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return p


NEEDLE = dict(preset="needle", mode="baldwin", population=30, generations=3)


def test_run_success_exit_zero(tmp_path, capsys):
    cfg = write_config(tmp_path, NEEDLE)
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "generations.csv").exists()
    assert "run complete" in capsys.readouterr().out


def test_invalid_config_exit_one(tmp_path, capsys):
    cfg = write_config(tmp_path, {**NEEDLE, "bogus": True})
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 1
    err = capsys.readouterr().err
    assert "config error" in err and "bogus" in err


def test_malformed_json_exit_one(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "r")]) == 1
    assert "config error" in capsys.readouterr().err


def test_missing_config_file_exit_one(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "none.json")]) == 1
    assert "not found" in capsys.readouterr().err


def test_occupied_out_dir_exit_one(tmp_path):
    cfg = write_config(tmp_path, NEEDLE)
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 1


def test_seed_override_lands_in_run_json(tmp_path):
    cfg = write_config(tmp_path, NEEDLE)
    out = tmp_path / "run"
    cli.main(["run", "--config", str(cfg), "--seed", "9", "--out", str(out)])
    assert json.loads((out / "run.json").read_text())["seed"] == 9


def test_sequential_flag_forces_one_worker(tmp_path):
    cfg = write_config(tmp_path, {**NEEDLE, "workers": 4})
    out = tmp_path / "run"
    cli.main(["run", "--config", str(cfg), "--sequential", "--out", str(out)])
    assert json.loads((out / "run.json").read_text())["workers"] == 1


def test_runtime_failure_exit_two(tmp_path, monkeypatch, capsys):
    cfg = write_config(tmp_path, NEEDLE)

    def explode(*a, **k):
        raise RuntimeError("disk fell off")

    monkeypatch.setattr(cli, "run_experiment", explode)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2
    assert "disk fell off" in capsys.readouterr().err


def test_interrupt_exit_two(tmp_path, monkeypatch, capsys):
    cfg = write_config(tmp_path, NEEDLE)

    def interrupt(*a, **k):
        raise KeyboardInterrupt

    monkeypatch.setattr(cli, "run_experiment", interrupt)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2
    assert "interrupted" in capsys.readouterr().err


def test_presets_list(capsys):
    assert cli.main(["presets", "list"]) == 0
    out = capsys.readouterr().out
    for name in ("sine-ga", "sine-snes", "sine-maml", "sine-pretrained", "rl-goalvel", "rl-goaldir", "needle"):
        assert name in out


def test_compare_two_runs(tmp_path, capsys):
    cfg = write_config(tmp_path, NEEDLE)
    for name in ("a", "b"):
        cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / name)])
    code = cli.main(
        ["compare", str(tmp_path / "a"), str(tmp_path / "b"), "--out", str(tmp_path / "cmp")]
    )
    assert code == 0
    assert (tmp_path / "cmp" / "ranking.csv").exists()
    assert "final best fitness" in capsys.readouterr().out


def test_compare_missing_dir_exit_one(tmp_path, capsys):
    assert cli.main(["compare", str(tmp_path / "ghost")]) == 1
    assert "missing run file" in capsys.readouterr().err
