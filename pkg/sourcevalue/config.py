"""Configuration management for the Source Value engine."""

from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import Optional


class Settings(BaseSettings):
    """Runtime settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="SOURCEVALUE_",
        case_sensitive=False,
        extra="ignore",
    )

    # Logging
    log_level: str = "INFO"
    log_file: Optional[str] = None

    # Parallelism
    parallel_backend: str = "loky"

    # Valuation guards and defaults
    exact_max_players: int = 20
    bootstrap_samples: int = 1000
    bootstrap_multiplier: float = 1.0

    # Workflows
    curve_max_fraction: float = 0.5


settings = Settings()
