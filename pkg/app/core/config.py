from typing import Optional
from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import field_validator


class Settings(BaseSettings):
    # Project
    PROJECT_NAME: str = "tripletleaf"
    VERSION: str = "1.0.0"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_JSON: bool = True

    # Reproducibility
    DEFAULT_SEED: int = 7

    # Data ingestion
    DEFAULT_IMAGE_SIZE: int = 32
    ENABLE_PNG: bool = False

    # Inference fan-out
    EMBED_WORKERS: int = 4
    EMBED_CHUNK: int = 64

    # Metrics (Prometheus text format, written at the end of each command)
    METRICS_TEXTFILE: Optional[str] = None

    # Model file format
    MODEL_MAGIC: bytes = b"TMLM"
    MODEL_VERSION: int = 1

    @field_validator("LOG_LEVEL")
    @classmethod
    def normalize_level(cls, v: str) -> str:
        level = v.upper()
        if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"unknown log level {v}")
        return level

    @field_validator("EMBED_WORKERS", "EMBED_CHUNK")
    @classmethod
    def positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    model_config = SettingsConfigDict(
        env_prefix="TRIPLETLEAF_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )


settings = Settings()
