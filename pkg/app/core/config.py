# file: app/core/config.py
from pydantic_settings import BaseSettings, SettingsConfigDict

class Settings(BaseSettings):
    """
    Centralized application configuration.
    Values are loaded from environment variables (e.g., from a .env file).
    """
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra='ignore'
    )

    # --- Output & Registry ---
    OUTPUT_DIR: str = "runs"
    REGISTRY_DB_PATH: str = "registry.db"

    # --- Logging ---
    LOG_LEVEL: str = "INFO"

    # --- Trace Serialization ---
    CSV_SIGNIFICANT_DIGITS: int = 17

    # --- Audit & Diagnostics ---
    AUDIT_ATOL: float = 1e-9
    AUDIT_RTOL: float = 1e-12
    RATE_WINDOW_FRACTION: float = 0.5

    # --- Batch Execution ---
    DEFAULT_JOBS: int = 1

    # --- HTTP Server ---
    API_HOST: str = "127.0.0.1"
    API_PORT: int = 8000


# Create a single settings instance to be used throughout the application
settings = Settings()
