"""Configuration management for training, distillation and attacks."""

import os
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .network import JacobianLayer


logger = logging.getLogger(__name__)


class AttackFamily(Enum):
    """Saliency-map attack families, keyed by their CLI spelling."""
    TARGETED_INCREASING = "+jsma"
    TARGETED_DECREASING = "-jsma"
    NON_TARGETED_INCREASING = "+nt"
    NON_TARGETED_DECREASING = "-nt"
    MAXIMAL = "maximal"

    @property
    def is_targeted(self) -> bool:
        return self in (AttackFamily.TARGETED_INCREASING, AttackFamily.TARGETED_DECREASING)

    @property
    def is_non_targeted(self) -> bool:
        return self in (AttackFamily.NON_TARGETED_INCREASING, AttackFamily.NON_TARGETED_DECREASING)

    @property
    def increases(self) -> bool:
        """True for the families that only ever raise feature values."""
        return self in (AttackFamily.TARGETED_INCREASING, AttackFamily.NON_TARGETED_INCREASING)


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch SGD settings."""

    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.05
    seed: int = 0
    hidden_dims: tuple[int, ...] = (64,)

    @classmethod
    def validated(cls, **kwargs) -> "TrainConfig":
        config = cls(**kwargs)
        _raise_if_invalid(ConfigValidator.validate_train(config))
        return config


@dataclass(frozen=True)
class DistillConfig:
    """Defensive distillation settings; the student trains at `temperature`."""

    temperature: float = 100.0
    train: TrainConfig = field(default_factory=TrainConfig)
    # None keeps the teacher's architecture
    student_hidden_dims: Optional[tuple[int, ...]] = None

    @classmethod
    def validated(cls, **kwargs) -> "DistillConfig":
        config = cls(**kwargs)
        _raise_if_invalid(ConfigValidator.validate_distill(config))
        return config


@dataclass(frozen=True)
class AttackConfig:
    """Variant selection for one attack run."""

    family: AttackFamily
    layer: JacobianLayer = JacobianLayer.SOFTMAX
    theta: float = 1.0
    epsilon: float = 1.0
    # None means unbounded
    max_iters: Optional[int] = None

    @classmethod
    def validated(cls, **kwargs) -> "AttackConfig":
        config = cls(**kwargs)
        _raise_if_invalid(ConfigValidator.validate_attack(config))
        return config

    @property
    def label(self) -> str:
        """Human name such as ``JSMA+F``, ``NT-JSMA-Z`` or ``M-JSMA_F``."""
        layer = self.layer.value
        if self.family is AttackFamily.MAXIMAL:
            return f"M-JSMA_{layer}"
        sign = "+" if self.family.increases else "-"
        prefix = "JSMA" if self.family.is_targeted else "NT-JSMA"
        return f"{prefix}{sign}{layer}"

    def as_dict(self) -> dict:
        return {
            "variant": self.label,
            "family": self.family.value,
            "layer": self.layer.value,
            "theta": self.theta,
            "epsilon": self.epsilon,
            "max_iters": self.max_iters,
        }


@dataclass
class Settings:
    """Process-wide defaults read from the environment."""

    log_level: str = "INFO"
    workers: int = 1
    progress: bool = True


class ConfigValidator:
    """Validator for configuration values."""

    LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

    @classmethod
    def validate_train(cls, config: TrainConfig) -> tuple[bool, Optional[str]]:
        """
        Validate SGD settings.

        Args:
            config: The training configuration to validate

        Returns:
            Tuple of (is_valid, error_message)
        """
        if config.epochs < 0:
            return False, f"Invalid epochs: {config.epochs}"

        if config.batch_size < 1:
            return False, f"Invalid batch_size: {config.batch_size}"

        if not config.learning_rate > 0:
            return False, f"Invalid learning_rate: {config.learning_rate}"

        if config.seed < 0 or config.seed >= 2 ** 64:
            return False, f"Seed must fit in 64 unsigned bits: {config.seed}"

        if any(dim < 1 for dim in config.hidden_dims):
            return False, f"Invalid hidden_dims: {config.hidden_dims}"

        return True, None

    @classmethod
    def validate_distill(cls, config: DistillConfig) -> tuple[bool, Optional[str]]:
        """Validate distillation settings, including the nested training block."""
        if not config.temperature >= 1:
            return False, f"Distillation temperature must be >= 1: {config.temperature}"

        if config.student_hidden_dims is not None and any(d < 1 for d in config.student_hidden_dims):
            return False, f"Invalid student_hidden_dims: {config.student_hidden_dims}"

        return cls.validate_train(config.train)

    @classmethod
    def validate_attack(cls, config: AttackConfig) -> tuple[bool, Optional[str]]:
        """Validate θ, ε and the iteration cap."""
        if not 0 < config.theta <= 1:
            return False, f"theta must be in (0, 1]: {config.theta}"

        if not 0 < config.epsilon <= 1:
            return False, f"epsilon must be in (0, 1]: {config.epsilon}"

        if config.max_iters is not None and config.max_iters < 1:
            return False, f"Invalid max_iters: {config.max_iters}"

        return True, None

    @classmethod
    def validate_settings(cls, settings: Settings) -> tuple[bool, Optional[str]]:
        if settings.log_level.upper() not in cls.LOG_LEVELS:
            return False, f"Invalid log level: {settings.log_level}"

        if settings.workers < 1:
            return False, f"Invalid worker count: {settings.workers}"

        return True, None


def _raise_if_invalid(result: tuple[bool, Optional[str]]):
    is_valid, error_msg = result
    if not is_valid:
        raise ValueError(f"Configuration validation failed: {error_msg}")


def load_settings() -> Settings:
    """
    Load process defaults from environment variables.

    Returns:
        Settings object with loaded values

    Raises:
        ValueError: If a variable is present but malformed
    """
    try:
        workers = int(os.getenv("JSMA_WORKERS", "1"))
    except ValueError:
        raise ValueError(f"JSMA_WORKERS must be an integer: {os.getenv('JSMA_WORKERS')}")

    settings = Settings(
        log_level=os.getenv("JSMA_LOG_LEVEL", "INFO"),
        workers=workers,
        progress=os.getenv("JSMA_PROGRESS", "1").strip().lower() not in ("0", "false", "no"),
    )

    _raise_if_invalid(ConfigValidator.validate_settings(settings))

    logger.debug(f"[Config] Log Level: {settings.log_level}")
    logger.debug(f"[Config] Workers: {settings.workers}")

    return settings


def load_env_file(env_file: str = ".env"):
    """
    Load environment variables from a .env file.

    Args:
        env_file: Path to the .env file
    """
    if not os.path.exists(env_file):
        logger.debug(f"[Config] .env file not found: {env_file}")
        return

    logger.info(f"[Config] Loading environment from {env_file}")

    with open(env_file, 'r') as f:
        for line in f:
            line = line.strip()

            # Skip empty lines and comments
            if not line or line.startswith('#'):
                continue

            if '=' in line:
                key, value = line.split('=', 1)
                key = key.strip()
                value = value.strip()

                if len(value) >= 2 and value[0] == value[-1] and value[0] in ('"', "'"):
                    value = value[1:-1]

                # Only set if not already in environment
                if key not in os.environ:
                    os.environ[key] = value
