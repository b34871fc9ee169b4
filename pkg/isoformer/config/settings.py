"""
Centralized runtime settings for IsoFormer.

This module provides a single source of truth for process-level settings
(logging, threading, determinism), read from the
environment and an optional ``.env`` file. Experiment hyperparameters live
in :mod:`isoformer.models.config_models` instead.
"""

import logging
from functools import lru_cache
from typing import Literal

from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load environment variables
load_dotenv()


class Settings(BaseSettings):
    """
    Runtime settings with validation and environment variable support.

    Every field may be overridden with an ``ISOFORMER_``-prefixed environment
    variable, e.g. ``ISOFORMER_LOG_LEVEL=DEBUG``.
    """

    model_config = SettingsConfigDict(env_prefix="ISOFORMER_", case_sensitive=False, extra="ignore")

    # Application
    app_name: str = Field(default="isoformer", description="Application name")
    app_version: str = Field(default="0.1.0", description="Application version")

    # Logging
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = Field(
        default="INFO", description="Root log level for the command-line entry point"
    )
    log_format: str = Field(
        default="%(asctime)s %(levelname)s %(name)s: %(message)s",
        description="logging.Formatter format string"
    )

    # Compute
    num_threads: int = Field(default=1, ge=1, description="torch intra-op threads")
    deterministic: bool = Field(
        default=True, description="Request deterministic torch kernels"
    )


@lru_cache()
def get_settings() -> Settings:
    """
    Get cached settings instance.

    Returns:
        Settings: Configured settings instance
    """
    return Settings()


def configure_logging(settings: Settings) -> None:
    """
    Configure the root logger from settings.

    Args:
        settings: Runtime settings
    """
    logging.basicConfig(level=settings.log_level, format=settings.log_format, force=True)
