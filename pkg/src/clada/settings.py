# settings.py
import os

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", extra="ignore", env_file_encoding="utf-8")

    CLADA_THREADS: int | None = None
    DEFAULT_SEED: int = 0
    LOG_LEVEL: str = "INFO"

    # desk-scale model defaults
    MODEL_LAYERS: int = 4
    MODEL_D_MODEL: int = 256
    MODEL_D_H: int = 1024
    MODEL_N_HEADS: int = 4
    MODEL_VOCAB_SIZE: int = 258
    MODEL_MAX_CTX: int = 2048
    MODEL_ACTIVATION: str = "silu"
    ROPE_BASE: float = 10000.0
    NORM_EPS: float = 1e-5

    # offline threshold search
    CETT_BUDGET: float = 0.2
    SEARCH_METHOD: str = "bisection"
    BISECTION_ITERS: int = 40
    GRID_QUANTILES: int = 64
    VALIDATION_TOKEN_CAP: int = 4096
    VALIDATION_HOLDOUT_FRACTION: float = 0.2

    # token-level modulation
    DEFAULT_LAMBDA: float = 0.80
    DEFAULT_GAMMA: float = 0.12
    SURPRISAL_QUANTILE: float = 0.75
    ENTROPY_QUANTILE: float = 0.75

    DEGENERATE_NORM: float = 1e-12
    LOG_PROB_FLOOR: float = 1e-30

    FLOCK_SEQ_LEN: int = 256
    FLOCK_PAIRS: int = 50

    BENCH_REPEATS: int = 5

    @property
    def worker_count(self) -> int:
        """Worker cap for thread pools, honouring CLADA_THREADS."""
        if self.CLADA_THREADS is not None and self.CLADA_THREADS > 0:
            return self.CLADA_THREADS
        return min(32, os.cpu_count() or 1)


settings = Settings()
