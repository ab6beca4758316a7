"""
Configuration management using pydantic-settings.
Process-level settings are loaded from ORL_* environment variables with
sensible defaults. Experiment descriptions live in harness/config.py.
"""
from functools import lru_cache
from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """ORL_* process settings: log level, output directory, workers and the prediction service."""

    model_config = SettingsConfigDict(
        env_prefix="ORL_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
    )

    # Logging
    log_level: str = "INFO"

    # Experiments
    out_dir: Path | None = None
    jobs: int = 1

    # Prediction service
    host: str = "0.0.0.0"
    port: int = 8000
    models_dir: Path = Path("results/models")
    max_upload_mb: int = 10

    @property
    def max_upload_bytes(self) -> int:
        return self.max_upload_mb * 1024 * 1024


@lru_cache
def get_settings() -> Settings:
    """Process settings, read from the environment and .env on first use; tests reset them with cache_clear()."""
    return Settings()
