"""
Configuration management for the QBV feature engine.
"""

import configparser
from pathlib import Path
from typing import Any, Dict, List, Optional
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


BASELINE_FEATURE_SETS = ["pk08", "temp", "mfcc"]
CAE_FEATURE_SETS = [f"cae-{k}" for k in range(1, 12)]
# CAE variants first, then the baselines
ALL_FEATURE_SETS = CAE_FEATURE_SETS + BASELINE_FEATURE_SETS


class ConfigError(Exception):
    """Custom exception for configuration errors."""
    pass


class Settings(BaseSettings):
    """Environment settings. Only the output directory may come from the environment."""

    model_config = SettingsConfigDict(env_prefix="QBV_", env_file=".env", extra="ignore")

    output_dir: Optional[Path] = None


class TrainingConfig(BaseModel):
    """Auto-encoder training hyper-parameters."""

    seed: int = Field(default=0, ge=0, lt=2**64, description="Stored as u64 in checkpoints")
    batch_size: int = Field(default=128, ge=2, description="Half imitations, half samples")
    learning_rate: float = Field(default=0.001, gt=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    epsilon: float = Field(default=1e-8, gt=0.0)
    patience: int = Field(default=10, ge=1)
    max_epochs: int = Field(default=200, ge=1)
    bn_momentum: float = Field(default=0.99, ge=0.0, lt=1.0)
    bn_epsilon: float = Field(default=1e-3, gt=0.0)
    train_fraction: float = Field(default=0.7, gt=0.0, lt=1.0)
    eval_chunk: int = Field(default=32, ge=1, description="Examples per infer-mode pass")

    @field_validator("batch_size")
    @classmethod
    def validate_batch_size(cls, v):
        """Batches are split evenly between the two clip kinds."""
        if v % 2:
            raise ValueError("batch_size must be even")
        return v


class RunConfig(BaseModel):
    """Everything one CLI invocation needs."""

    manifest: Optional[Path] = None
    ratings: Optional[Path] = None
    feature_sets: List[str] = Field(default_factory=lambda: list(ALL_FEATURE_SETS))
    training: TrainingConfig = Field(default_factory=TrainingConfig)
    output_dir: Path = Path("qbv_output")
    workers: int = Field(default=4, ge=1)

    @field_validator("feature_sets", mode="before")
    @classmethod
    def parse_feature_sets(cls, v):
        """Accept a comma-separated list as well as a list."""
        if isinstance(v, str):
            v = [name.strip() for name in v.split(",") if name.strip()]
        return v

    @field_validator("feature_sets")
    @classmethod
    def validate_feature_sets(cls, v):
        """Ensure every feature set is supported and named once."""
        names = [name.lower() for name in v]
        unknown = [name for name in names if name not in ALL_FEATURE_SETS]
        if unknown:
            raise ValueError(f"unknown feature sets {unknown}; must be among: {ALL_FEATURE_SETS}")
        if len(set(names)) != len(names):
            raise ValueError("feature sets must not repeat")
        if not names:
            raise ValueError("at least one feature set is required")
        return names

    @model_validator(mode="after")
    def resolve_paths(self):
        if self.manifest is not None:
            self.manifest = Path(self.manifest)
        if self.ratings is not None:
            self.ratings = Path(self.ratings)
        return self

    def require_manifest(self) -> Path:
        if self.manifest is None:
            raise ConfigError("no corpus manifest configured ([corpus] manifest)")
        if not self.manifest.exists():
            raise ConfigError(f"manifest not found: {self.manifest}")
        return self.manifest

    def require_ratings(self) -> Path:
        if self.ratings is None:
            raise ConfigError("no ratings file configured ([corpus] ratings)")
        if not self.ratings.exists():
            raise ConfigError(f"ratings file not found: {self.ratings}")
        return self.ratings

    def cae_variants(self) -> List[int]:
        """Variant numbers of the requested CAE feature sets."""
        return [int(name.split("-")[1]) for name in self.feature_sets if name.startswith("cae-")]


_SECTION_KEYS = {
    "corpus": {"manifest", "ratings"},
    "features": {"sets"},
    "training": set(TrainingConfig.model_fields) | {"workers"},
    "output": {"directory"},
}


def _read_config_file(path: Path) -> Dict[str, Any]:
    """Read the sectioned key=value file into RunConfig keyword arguments."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except (OSError, configparser.Error) as e:
        raise ConfigError(f"cannot read config file {path}: {e}")

    for section in parser.sections():
        if section not in _SECTION_KEYS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        unknown = set(parser[section]) - _SECTION_KEYS[section]
        if unknown:
            raise ConfigError(f"{path}: unknown keys in [{section}]: {sorted(unknown)}")

    base = path.parent
    values: Dict[str, Any] = {}
    if parser.has_section("corpus"):
        for key in ("manifest", "ratings"):
            if parser["corpus"].get(key):
                values[key] = base / parser["corpus"][key]
    if parser.has_section("features") and parser["features"].get("sets"):
        values["feature_sets"] = parser["features"]["sets"]
    if parser.has_section("training"):
        training = dict(parser["training"])
        if "workers" in training:
            values["workers"] = training.pop("workers")
        values["training"] = training
    if parser.has_section("output") and parser["output"].get("directory"):
        values["output_dir"] = base / parser["output"]["directory"]
    return values


def load_run_config(
    path: Optional[Path] = None,
    seed: Optional[int] = None,
    output_dir: Optional[Path] = None,
    feature_sets: Optional[str] = None,
    settings: Optional[Settings] = None,
) -> RunConfig:
    """Build the RunConfig from an optional file, the environment and CLI overrides.

    Precedence, lowest first: defaults, config file, QBV_OUTPUT_DIR, CLI flags.
    """
    values: Dict[str, Any] = _read_config_file(Path(path)) if path is not None else {}

    env = settings if settings is not None else Settings()
    if env.output_dir is not None:
        values["output_dir"] = env.output_dir
    if output_dir is not None:
        values["output_dir"] = output_dir
    if feature_sets is not None:
        values["feature_sets"] = feature_sets
    if seed is not None:
        training = dict(values.get("training", {}))
        training["seed"] = seed
        values["training"] = training

    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}")
