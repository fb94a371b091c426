from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    PROJECT_NAME: str = "Fingerprint Active Learning Lab"
    APP_VERSION: str = "1.0.0"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "json"
    TRAIN_LOG_EVERY: int = 100  # epochs between progress records

    # Execution
    DEFAULT_WORKERS: int = 1
    DEFAULT_OUTPUT_DIR: str = "./runs"

    @field_validator("LOG_FORMAT")
    @classmethod
    def validate_log_format(cls, v: str) -> str:
        if v not in ("json", "plain"):
            raise ValueError("LOG_FORMAT must be 'json' or 'plain'")
        return v

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")


settings = Settings()
