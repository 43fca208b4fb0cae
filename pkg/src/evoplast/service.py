"""HTTP front end over the experiment harness.

Runs execute on background threads inside the service process; each run owns
one directory under the service root and exposes its artifact files for
download. The CLI remains the primary interface; this wrapper exists so runs
can be launched and polled from other tooling.
"""

from __future__ import annotations

import re
import threading
import uuid
from pathlib import Path
from typing import Literal, Optional

from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, ConfigDict, Field

from .config import PRESET_DEFAULTS, PRESET_NAMES, PRESET_SUMMARIES, ConfigError, ExperimentConfig
from .harness import compare_runs, run_experiment

_FILE_NAME = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")


class RunRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: ExperimentConfig
    name: Optional[str] = Field(
        None,
        pattern=r"^[A-Za-z0-9][A-Za-z0-9_-]*$",
        max_length=80,
        description="run directory name; generated when omitted",
    )


class RunStatus(BaseModel):
    id: str
    state: Literal["running", "done", "failed"]
    preset: str
    mode: Optional[str]
    seed: int
    out_dir: str
    generations_done: int
    error: Optional[str] = None


class CompareRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    run_dirs: list[str] = Field(min_length=1)


class RankingRow(BaseModel):
    rank: int
    run: str
    preset: str
    mode: str
    seed: int
    final_best_fitness: float


class CompareResponse(BaseModel):
    family: str
    runs: list[str]
    generations: int
    ranking: list[RankingRow]


class PresetInfo(BaseModel):
    name: str
    summary: str
    generations: int
    population: int


class _Registry:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._runs: dict[str, dict] = {}

    def create(self, run_id: str, cfg: ExperimentConfig, out_dir: Path) -> None:
        with self._lock:
            self._runs[run_id] = {
                "state": "running",
                "config": cfg,
                "out_dir": out_dir,
                "error": None,
            }

    def finish(self, run_id: str, error: Optional[str]) -> None:
        with self._lock:
            entry = self._runs[run_id]
            entry["state"] = "failed" if error else "done"
            entry["error"] = error

    def get(self, run_id: str) -> Optional[dict]:
        with self._lock:
            entry = self._runs.get(run_id)
            return dict(entry) if entry else None


def _generations_done(out_dir: Path) -> int:
    p = out_dir / "generations.csv"
    if not p.exists():
        return 0
    with open(p, newline="") as fh:
        return max(0, sum(1 for _ in fh) - 1)


def create_app(root: Optional[Path] = None) -> FastAPI:
    root_dir = Path(root) if root is not None else Path("runs")
    app = FastAPI(title="evoplast", version="0.1.0")
    registry = _Registry()

    def _status(run_id: str, entry: dict) -> RunStatus:
        cfg: ExperimentConfig = entry["config"]
        return RunStatus(
            id=run_id,
            state=entry["state"],
            preset=cfg.preset,
            mode=cfg.mode,
            seed=cfg.seed,
            out_dir=str(entry["out_dir"]),
            generations_done=_generations_done(entry["out_dir"]),
            error=entry["error"],
        )

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.get("/presets", response_model=list[PresetInfo])
    def presets() -> list[PresetInfo]:
        return [
            PresetInfo(
                name=name,
                summary=PRESET_SUMMARIES[name],
                generations=PRESET_DEFAULTS[name][0],
                population=PRESET_DEFAULTS[name][1],
            )
            for name in PRESET_NAMES
        ]

    @app.post("/runs", response_model=RunStatus, status_code=202)
    def start_run(req: RunRequest) -> RunStatus:
        cfg = req.config.resolved()
        run_id = req.name or f"{cfg.preset}-seed{cfg.seed}-{uuid.uuid4().hex[:8]}"
        out_dir = root_dir / run_id
        if registry.get(run_id) is not None or (out_dir / "generations.csv").exists():
            raise HTTPException(status_code=409, detail=f"run {run_id} already exists")
        registry.create(run_id, cfg, out_dir)

        def drive() -> None:
            try:
                run_experiment(cfg, out_dir)
            except Exception as e:  # noqa: BLE001 - reported through status
                registry.finish(run_id, f"{type(e).__name__}: {e}")
            else:
                registry.finish(run_id, None)

        threading.Thread(target=drive, name=f"run-{run_id}", daemon=True).start()
        return _status(run_id, registry.get(run_id))

    @app.get("/runs/{run_id}", response_model=RunStatus)
    def run_status(run_id: str) -> RunStatus:
        entry = registry.get(run_id)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"unknown run: {run_id}")
        return _status(run_id, entry)

    @app.get("/runs/{run_id}/files/{file_name}")
    def run_file(run_id: str, file_name: str) -> PlainTextResponse:
        entry = registry.get(run_id)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"unknown run: {run_id}")
        if not _FILE_NAME.match(file_name):
            raise HTTPException(status_code=400, detail="bad file name")
        path = entry["out_dir"] / file_name
        if not path.is_file():
            raise HTTPException(status_code=404, detail=f"no such artifact: {file_name}")
        media = "text/csv" if path.suffix == ".csv" else "application/json"
        return PlainTextResponse(path.read_text(), media_type=media)

    @app.post("/compare", response_model=CompareResponse)
    def compare(req: CompareRequest) -> CompareResponse:
        dirs = []
        for d in req.run_dirs:
            p = Path(d)
            dirs.append(p if p.is_absolute() or p.exists() else root_dir / d)
        try:
            comp = compare_runs(dirs)
        except ConfigError as e:
            raise HTTPException(status_code=400, detail=str(e)) from e
        return CompareResponse(
            family=comp.family,
            runs=[v.name for v in comp.views],
            generations=len(comp.generations),
            ranking=[RankingRow(**r) for r in comp.ranking],
        )

    return app
