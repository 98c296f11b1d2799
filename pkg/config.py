"""
Configuration module for Interpretable Bandit Bench
Loads and validates environment variables and numerical constants
"""

import os
from typing import Optional

import psutil
from dotenv import load_dotenv

load_dotenv()


class Config:
    """Configuration class for bench settings"""

    BENCH_NAME: str = "Interpretable Bandit Bench"

    # Parallelism (0 means one worker per physical core)
    BENCH_THREADS: int = 0
    _RAW_THREADS: Optional[str] = os.getenv("BENCH_THREADS")

    # Locations
    CONFIG_DIR: str = os.getenv("BENCH_CONFIG_DIR", "./configs")
    OUTPUT_DIR: str = os.getenv("BENCH_OUTPUT_DIR", "./results")

    LOG_LEVEL: str = os.getenv("BENCH_LOG_LEVEL", "INFO").upper()

    # Design matrix maintenance
    INVERSE_REFRESH_INTERVAL: int = 500
    INVERSE_DRIFT_TOL: float = 1e-8

    # Harness
    CHECKPOINTS: int = 100

    # Design solver
    DESIGN_MAX_ITER: int = 10_000
    DESIGN_PRUNE_WEIGHT: float = 1e-9

    # Dataset pipelines
    DEFAULT_ALS_LAMBDA: float = 0.1
    DEFAULT_ALS_ITERS: int = 50

    # Output files
    RAW_CSV: str = "raw.csv"
    AGGREGATE_CSV: str = "aggregate.csv"
    REGRET_SVG: str = "regret.svg"
    INTERPRETABILITY_SVG: str = "interpretability.svg"

    @classmethod
    def validate(cls) -> bool:
        """Validate environment-provided settings"""
        cls.BENCH_THREADS = cls.parse_threads(cls._RAW_THREADS)

        if cls.LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"BENCH_LOG_LEVEL must be a logging level name, got {cls.LOG_LEVEL!r}")

        return True

    @staticmethod
    def parse_threads(raw: Optional[str]) -> int:
        """Parse BENCH_THREADS; empty or missing means automatic"""
        if raw is None or not raw.strip():
            return 0
        try:
            value = int(raw.strip())
        except ValueError:
            raise ValueError(f"BENCH_THREADS must be an integer, got {raw!r}")
        if value < 0:
            raise ValueError(f"BENCH_THREADS must be non-negative, got {value}")
        return value

    @classmethod
    def worker_count(cls, override: Optional[int] = None) -> int:
        """Number of worker processes for simulation tasks"""
        requested = cls.BENCH_THREADS if override is None else override
        if requested and requested > 0:
            return requested
        return psutil.cpu_count(logical=False) or os.cpu_count() or 1


# Validate configuration on import
Config.validate()
