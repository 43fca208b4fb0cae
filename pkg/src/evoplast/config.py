"""Experiment configuration: presets, per-module overrides, validation.

Every module default is reachable from here so a run is fully described by
one JSON document. Unknown keys are rejected, which keeps old run.json files
honest when fields get renamed.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .evolution import LEARNING_RATE_RANGE

PRESET_NAMES = (
    "sine-ga",
    "sine-snes",
    "sine-maml",
    "sine-pretrained",
    "rl-goalvel",
    "rl-goaldir",
    "needle",
)

PRESET_SUMMARIES = {
    "sine-ga": "generational GA over net weights + inner-loop hyperparameters on sine regression",
    "sine-snes": "separable NES over net weights on sine regression, fixed inner learning rate",
    "sine-maml": "second-order meta-gradient baseline on sine regression",
    "sine-pretrained": "pooled-SGD pretraining baseline on sine regression",
    "rl-goalvel": "steady-state GA on the target-velocity control family",
    "rl-goaldir": "steady-state GA on the target-direction control family",
    "needle": "lookup-table needle-in-a-haystack replication",
}

# preset -> (generations, population)
PRESET_DEFAULTS = {
    "sine-ga": (2000, 100),
    "sine-snes": (2000, 25),
    "sine-maml": (2000, 25),
    "sine-pretrained": (2000, 25),
    "rl-goalvel": (200, 100),
    "rl-goaldir": (200, 100),
    "needle": (50, 1000),
}

RL_PRESETS = ("rl-goalvel", "rl-goaldir")
SINE_PRESETS = ("sine-ga", "sine-snes", "sine-maml", "sine-pretrained")


class ConfigError(ValueError):
    """Invalid configuration or unusable run inputs (CLI exit code 1)."""


class SineSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_tasks: int = Field(25, ge=1)  # tasks per fitness batch
    k_train: int = Field(10, ge=1)
    k_test: int = Field(10, ge=1)
    n_inner: int = Field(5, ge=0)
    x_min: float = -5.0
    x_max: float = 5.0
    eval_tasks: int = Field(20, ge=1)  # held-out batch for adaptation.csv
    snes_sigma: float = Field(0.05, gt=0)
    snes_inner_lr: float = 1e-3


class MamlSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    alpha: float = Field(0.01, gt=0)
    beta: float = Field(0.001, ge=0)
    k_shot: int = Field(10, ge=1)
    n_inner_train: int = Field(1, ge=1)
    n_inner_eval: int = Field(5, ge=0)
    probe_tasks: int = Field(5, ge=1)  # fixed tasks scored every outer step


class RLSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    damping: float = Field(0.1, gt=0, lt=1)
    dt: float = Field(0.01, gt=0)
    gains: tuple[float, float, float] = (21.0, 10.5, 5.25)
    episode_len: int = Field(3000, ge=1)
    pos_scale: float = Field(10.0, gt=0)
    rollout_len: int = Field(40, ge=1)
    value_loss_coeff: float = Field(0.5, ge=0)
    reward_scale: float = Field(1.0, gt=0)
    torso: int = Field(100, ge=1)
    tournament_size: int = Field(10, ge=2)
    init_std: float = Field(0.3, gt=0)
    macro_init_std: float = Field(0.5, gt=0)


class NeedleSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    p1: float = Field(0.25, ge=0, le=1)
    p0: float = Field(0.25, ge=0, le=1)
    pq: float = Field(0.5, ge=0, le=1)
    trials: int = Field(1000, ge=1)
    selection: Literal["proportional", "rank"] = "proportional"
    pressure: float = Field(1.5, ge=1, le=2)
    elitism: int = Field(1, ge=0)
    mutation_rate: float = Field(0.05, gt=0, le=1)
    crossover: bool = True


class MutationSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    param_std: float = Field(0.02, ge=0)
    hyper_log_std: float = Field(0.2, ge=0)
    macro_std: float = Field(0.05, ge=0)
    mask_flip_prob: Optional[float] = Field(None, gt=0, le=1)


class GaSettings(BaseModel):
    """Generational-GA selection knobs (sine-ga preset)."""

    model_config = ConfigDict(extra="forbid")

    pressure: float = Field(1.5, ge=1, le=2)
    elitism: int = Field(1, ge=0)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    preset: Literal[PRESET_NAMES]  # type: ignore[valid-type]
    mode: Optional[Literal["baldwin", "lamarck", "darwin"]] = None
    mask_enabled: bool = False
    seed: int = 0
    generations: Optional[int] = Field(None, ge=1)
    population: Optional[int] = Field(None, ge=2)
    workers: int = Field(1, ge=1)  # >1 evaluates populations in a thread pool

    sine: SineSettings = SineSettings()
    maml: MamlSettings = MamlSettings()
    rl: RLSettings = RLSettings()
    needle: NeedleSettings = NeedleSettings()
    mutation: MutationSettings = MutationSettings()
    ga: GaSettings = GaSettings()

    @model_validator(mode="after")
    def _cross_checks(self) -> "ExperimentConfig":
        if self.preset in RL_PRESETS:
            if self.mode is None:
                raise ValueError(f"preset {self.preset} requires a mode")
            if self.rl.episode_len % self.rl.rollout_len != 0:
                raise ValueError("rl.rollout_len must divide rl.episode_len")
        elif self.preset == "needle":
            if self.mode not in ("baldwin", "darwin"):
                raise ValueError("needle runs take mode baldwin or darwin")
            s = self.needle.p1 + self.needle.p0 + self.needle.pq
            if abs(s - 1.0) > 1e-12:
                raise ValueError(f"needle allele priors sum to {s}, expected 1")
        else:
            if self.mode is not None:
                raise ValueError(f"preset {self.preset} does not take a mode")
        if self.preset in SINE_PRESETS:
            if not self.sine.x_min < self.sine.x_max:
                raise ValueError("sine.x_min must be below sine.x_max")
            lo, hi = LEARNING_RATE_RANGE
            if not lo <= self.sine.snes_inner_lr <= hi:
                raise ValueError(
                    f"sine.snes_inner_lr must lie in [{lo}, {hi}]"
                )
        return self

    def resolved(self) -> "ExperimentConfig":
        """Copy with generations/population filled from the preset defaults,
        so run.json spells out what actually ran."""
        gens, pop = PRESET_DEFAULTS[self.preset]
        update = {}
        if self.generations is None:
            update["generations"] = gens
        if self.population is None:
            update["population"] = pop
        return self.model_copy(update=update) if update else self
