"""Service configuration.

All knobs live on pydantic-settings models so they are validated once, at
startup. Values come from (highest precedence first) a key=value config file,
`KGR_`-prefixed environment variables (e.g. `KGR_DIM=64`), then the defaults
below.

Config file grammar:

    # comment
    dim=64
    model=Q2B
    structure_schedule=1p:2,2p:1,2i:1

Keys are field names; unknown keys are rejected.
"""

from pathlib import Path
from typing import Literal

from pydantic import Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.errors import ConfigError
from app.models.kinds import ModelKind
from app.query.structure import CATALOG_EXPRESSIONS


class SamplerSettings(BaseSettings):
    """Knobs of the online sampler (rejection rounds, caps, retries)."""

    model_config = SettingsConfigDict(env_prefix="KGR_", extra="ignore", frozen=True)

    oversample: float = Field(2.0, ge=1.0)
    max_rounds: int = Field(8, ge=1)
    retry_budget: int = Field(100, ge=1)
    set_cap: int = Field(1_000_000, ge=1)


class EvalSettings(BaseSettings):
    """Knobs of the evaluator."""

    model_config = SettingsConfigDict(env_prefix="KGR_EVAL_", extra="ignore", frozen=True)

    negatives: int = Field(1000, ge=1)
    workers: int = Field(4, ge=1)
    seed: int = 0
    hits_at: tuple[int, ...] = (1, 3, 10)


class TrainConfig(BaseSettings):
    """Training configuration (mirrors the `train --config` file)."""

    model_config = SettingsConfigDict(env_prefix="KGR_", extra="forbid", frozen=True)

    model: ModelKind = ModelKind.GQE
    dim: int = Field(32, ge=1)
    hidden_dim: int | None = Field(None, ge=1)
    batch_size: int = Field(64, ge=1)
    shared_negatives: int = Field(32, ge=1)
    margin: float = Field(6.0, gt=0.0)
    alpha: float = Field(0.02, ge=0.0)
    beta_floor: float = Field(0.05, gt=0.0)
    learning_rate: float = Field(1e-3, gt=0.0)
    beta1: float = Field(0.9, gt=0.0, lt=1.0)
    beta2: float = Field(0.999, gt=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    workers: int = Field(1, ge=1)
    sampler_threads: int = Field(2, ge=1)
    prefetch_depth: int = Field(4, ge=1)
    steps: int = Field(100, ge=1)
    structure_schedule: str = "1p:1"
    seed: int = 0
    negative_mode: Literal["verified", "random"] = "verified"
    oversample: float = Field(2.0, ge=1.0)
    max_rounds: int = Field(8, ge=1)
    retry_budget: int = Field(100, ge=1)
    set_cap: int = Field(1_000_000, ge=1)
    row_locking: bool = False
    log_every: int = Field(1, ge=1)

    @field_validator("structure_schedule")
    @classmethod
    def _check_schedule(cls, value: str) -> str:
        parse_schedule(value)
        return value

    @model_validator(mode="after")
    def _check_dims(self) -> "TrainConfig":
        if self.model.paired_dim and self.dim % 2:
            raise ValueError(f"dim must be even for {self.model.value}, got {self.dim}")
        return self

    @property
    def schedule(self) -> list[tuple[str, float]]:
        """Parsed `(structure name, weight)` pairs."""
        return parse_schedule(self.structure_schedule)

    @property
    def width(self) -> int:
        """Hidden width of the dense operator networks."""
        return self.hidden_dim or self.dim

    def sampler_settings(self) -> SamplerSettings:
        """Sampler knobs carried by this config."""
        return SamplerSettings(
            oversample=self.oversample,
            max_rounds=self.max_rounds,
            retry_budget=self.retry_budget,
            set_cap=self.set_cap,
        )


def parse_schedule(text: str) -> list[tuple[str, float]]:
    """Parse `name:weight,name:weight` (weight defaults to 1)."""
    out: list[tuple[str, float]] = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        name, _, weight = item.partition(":")
        name = name.strip()
        if name not in CATALOG_EXPRESSIONS:
            raise ValueError(f"unknown structure in schedule: {name!r}")
        w = float(weight) if weight.strip() else 1.0
        if w <= 0:
            raise ValueError(f"schedule weight must be > 0 for {name!r}")
        out.append((name, w))
    if not out:
        raise ValueError("structure schedule is empty")
    return out


def read_key_values(path: str | Path) -> dict[str, str]:
    """Read a key=value file into a dict (comments and blank lines skipped)."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            values[key.strip()] = value.strip()
    return values


def load_config(path: str | Path | None = None, **overrides) -> TrainConfig:
    """Build a validated TrainConfig from an optional file plus overrides."""
    values: dict[str, object] = dict(read_key_values(path)) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig(**values)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first.get("loc", ())) or "config"
        raise ConfigError(f"{field}: {first.get('msg')}") from e
