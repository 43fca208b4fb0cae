"""Command line entry points.

Exit codes: 0 success, 1 configuration error, 2 runtime failure. A run
interrupted mid-flight keeps every completed generation on disk and exits 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from pydantic import ValidationError

from .config import PRESET_DEFAULTS, PRESET_NAMES, PRESET_SUMMARIES, ConfigError, ExperimentConfig
from .harness import compare_runs, comparison_text, run_experiment, write_comparison_csvs


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evoplast", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one experiment from a JSON config")
    run.add_argument("--config", required=True, help="path to a JSON ExperimentConfig")
    run.add_argument("--seed", type=int, default=None, help="override the config's seed")
    run.add_argument(
        "--sequential",
        action="store_true",
        help="force single-threaded fitness evaluation",
    )
    run.add_argument("--out", default=None, help="run directory (default runs/<preset>[-<mode>]-seed<seed>)")

    comp = sub.add_parser("compare", help="tabulate and rank finished runs")
    comp.add_argument("run_dirs", nargs="+", help="run directories to compare")
    comp.add_argument("--out", default=".", help="where compare CSVs are written")

    presets = sub.add_parser("presets", help="preset catalogue")
    presets.add_argument("action", choices=["list"])

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--root", default="runs", help="directory that owns service-started runs")
    return p


def _load_config(path: str) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {p}: {e}") from e
    try:
        return ExperimentConfig(**raw)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def _cmd_run(args) -> int:
    cfg = _load_config(args.config)
    update = {}
    if args.seed is not None:
        update["seed"] = args.seed
    if args.sequential:
        update["workers"] = 1
    if update:
        cfg = cfg.model_copy(update=update)
    if args.out is not None:
        out = Path(args.out)
    else:
        mode = f"-{cfg.mode}" if cfg.mode else ""
        out = Path("runs") / f"{cfg.preset}{mode}-seed{cfg.seed}"
    try:
        run_experiment(cfg, out)
    except KeyboardInterrupt:
        print(f"interrupted; completed generations kept in {out}", file=sys.stderr)
        return 2
    print(f"run complete: {out}")
    return 0


def _cmd_compare(args) -> int:
    comp = compare_runs(args.run_dirs)
    sys.stdout.write(comparison_text(comp))
    paths = write_comparison_csvs(comp, args.out)
    print("wrote: " + ", ".join(str(p) for p in paths))
    return 0


def _cmd_presets(_args) -> int:
    for name in PRESET_NAMES:
        gens, pop = PRESET_DEFAULTS[name]
        print(f"{name:16s} generations={gens:<5d} population={pop:<5d} {PRESET_SUMMARIES[name]}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(Path(args.root)), host=args.host, port=args.port)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {
        "run": _cmd_run,
        "compare": _cmd_compare,
        "presets": _cmd_presets,
        "serve": _cmd_serve,
    }[args.command]
    try:
        return handler(args)
    except (ConfigError, ValidationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
