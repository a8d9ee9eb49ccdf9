import os
from typing import Literal, Self

from pydantic import PositiveFloat, PositiveInt, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_ignore_empty=True,
        extra="ignore",
    )
    PROJECT_NAME: str = "mixbreak"
    ENVIRONMENT: Literal["test", "local", "production"] = "local"
    LOG_LEVEL: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"

    # Scale floor; 0.025 corresponds to sigma_max = 5 with the calibrated c0 = 0.005
    SIGMA0: PositiveFloat = 0.025
    RESTARTS: PositiveInt = 20
    MAX_ITERS: PositiveInt = 2000
    REL_TOL: PositiveFloat = 1e-10
    INNER_ITERS: PositiveInt = 200
    INNER_TOL: PositiveFloat = 1e-12
    SEED: int = 0
    S_MAX: PositiveInt = 10

    # Insertion starts are screened with a short EM run, the best few run to the end
    SCREEN_ITERS: PositiveInt = 30
    SCREEN_KEEP: PositiveInt = 3

    THREADS: PositiveInt = min(8, os.cpu_count() or 1)

    REPORT_SCHEMA_VERSION: str = "1.0"
    SIGNIFICANT_DIGITS: PositiveInt = 12

    @model_validator(mode="after")
    def _adjust_for_testing(self) -> Self:
        if self.ENVIRONMENT == "test":
            self.THREADS = 1
            self.LOG_LEVEL = "WARNING"
        return self


settings = Settings()
