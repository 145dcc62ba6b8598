"""
Configuration module

Loads run defaults from environment variables (prefix ``XMAS_``) and an
optional ``.env`` file. Command-line flags override these values.
"""
from functools import lru_cache
from typing import Literal, Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Application settings
    """
    # Logging
    log_level: Literal['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'] = "INFO"
    log_file: Optional[str] = None

    # Multi-level mitigation
    k: int = Field(default=5, ge=2)
    max_steps: int = Field(default=100, ge=1)
    border_mode: Literal['replicate', 'reflect'] = "replicate"
    stop_on_stall: bool = True

    # Soothing
    jpeg_quality: int = Field(default=20, ge=1, le=100)

    # Classifiers
    classifier_timeout: float = Field(default=30.0, gt=0)
    toy_temperature: float = Field(default=0.05, gt=0)

    # Attack synthesis
    attack_iterations: int = Field(default=10, ge=1)

    # Probability oracle
    max_enumeration: int = Field(default=3 ** 9, ge=1)

    # Batch runs
    batch_workers: int = Field(default=4, ge=1)

    model_config = SettingsConfigDict(
        env_prefix="XMAS_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore"
    )


@lru_cache()
def get_settings() -> Settings:
    """
    Return the process-wide settings instance (built once).
    """
    return Settings()
