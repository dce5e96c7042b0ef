"""
Runtime settings and experiment configuration.

Settings come from the environment (prefix ``NTD_``) and an optional
``.env`` file.  Experiment configurations come from YAML files whose keys
may be flat (``noise_rate: 0.4``) or nested (``stream: {noise_rate: 0.4}``).
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

import yaml
from pydantic import BaseModel, Field, NonNegativeInt, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from services.errors import ConfigError
from services.learner import LearnerConfig
from services.scoring import PolicyConfig
from services.streamgen import StreamSpec

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="NTD_", env_file=".env", extra="ignore")

    log_level: str = "INFO"
    log_file: str = "ntd.log"
    results_dir: Path = Path("results")
    default_config: Path = Path("configs/default.yaml")


class ExperimentConfig(BaseModel):
    stream: StreamSpec = Field(default_factory=StreamSpec)
    memory_size: int = Field(500, ge=1)
    batch_size: int = Field(16, ge=1)
    # memory samples appended to every online mini-batch; 0 trains on the stream alone
    replay_size: int = Field(16, ge=0)
    tta: PolicyConfig = Field(default_factory=PolicyConfig)
    learner: LearnerConfig = Field(default_factory=LearnerConfig)
    mem_epochs: int = Field(32, ge=1)
    sampler: Literal["ntd", "reservoir"] = "ntd"
    trials: List[NonNegativeInt] = Field(default_factory=lambda: [0, 1, 2], min_length=1)
    # memory-usage stage after every task, or only once at the end of the stream
    train_each_task: bool = True
    test_size: int = Field(2000, ge=1)
    output: Optional[Path] = None

    @model_validator(mode="after")
    def _test_set_covers_classes(self):
        if self.test_size < self.stream.num_classes:
            raise ValueError(
                f"test_size ({self.test_size}) must be at least num_classes ({self.stream.num_classes})"
            )
        return self


# Sections a flat key can belong to, in lookup order
_SECTIONS = {
    "stream": StreamSpec,
    "tta": PolicyConfig,
    "learner": LearnerConfig,
}


def _nest(raw: Mapping[str, Any]) -> Dict[str, Any]:
    """Route flat keys into their section; nested sections pass through."""
    nested: Dict[str, Any] = {}
    for key, value in raw.items():
        if key in _SECTIONS and isinstance(value, Mapping):
            nested.setdefault(key, {}).update(value)
        elif key in ExperimentConfig.model_fields:
            nested[key] = value
        else:
            section = next((name for name, model in _SECTIONS.items() if key in model.model_fields), None)
            if section is None:
                raise ConfigError(f"unknown configuration key '{key}'")
            nested.setdefault(section, {})[key] = value
    return nested


def config_from_mapping(
    raw: Optional[Mapping[str, Any]] = None, overrides: Optional[Mapping[str, Any]] = None
) -> ExperimentConfig:
    """Build a validated config; ``overrides`` (flat or nested) win over ``raw``."""
    merged = _nest(raw or {})
    for section, values in _nest({k: v for k, v in (overrides or {}).items() if v is not None}).items():
        if section in _SECTIONS:
            merged.setdefault(section, {}).update(values)
        else:
            merged[section] = values
    if "seed" in merged.get("stream", {}):
        logger.warning("stream seed is ignored: every trial reseeds the stream from 'trials'")
    try:
        config = ExperimentConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(f"invalid experiment configuration: {e}") from e

    if config.memory_size < config.stream.num_classes:
        logger.warning(
            f"memory_size {config.memory_size} < num_classes {config.stream.num_classes}: "
            "some label groups will stay empty"
        )
    if config.stream.noise_type == "asymmetric" and any(
        len(subset) == 1 for subset in config.stream.classes_per_task
    ):
        logger.warning("single-class tasks cannot be flipped by asymmetric noise")
    return config


def load_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    raw: Mapping[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = yaml.safe_load(f) or {}
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"malformed YAML in {path}: {e}") from e
        if not isinstance(raw, Mapping):
            raise ConfigError(f"config file {path} must contain a mapping")
        logger.info(f"Loaded experiment config from {path}")
    return config_from_mapping(raw, overrides)
