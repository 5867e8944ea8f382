import os
from dotenv import load_dotenv
from pathlib import Path
from loguru import logger

load_dotenv()


def _env_flag(name: str, default: str = "0") -> bool:
    return os.getenv(name, default).strip().lower() in {"1", "true", "yes", "on"}


class Config:
    """Production configuration"""

    # Runtime
    WORKERS = int(os.getenv("CAVITY_WORKERS", "1"))
    LOG_LEVEL = os.getenv("CAVITY_LOG_LEVEL", "INFO").strip().upper()
    LOG_TO_FILE = _env_flag("CAVITY_LOG_TO_FILE")

    # Paths
    BASE_DIR = Path(__file__).parent
    LOGS_DIR = BASE_DIR / "logs"
    OUTPUT_DIR = Path(os.getenv("CAVITY_OUTPUT_DIR", str(BASE_DIR / "outputs")))

    # Instance sanity cap (N and M)
    MAX_DIM = 20000

    # Quadrature
    QUAD_ORDERS = (61, 121, 241)
    QUAD_RTOL = 1e-8
    QUAD_SPAN = 12.0  # standard deviations covered by truncated rules

    # Fixed points
    DAMPING = 0.5
    FIXED_POINT_TOL = 1e-10
    FIXED_POINT_MAX_ITER = 10000
    BP_MAX_ITER = 200000
    DIVERGENCE_FACTOR = 1e6
    RECOVERY_FACTOR = 1e-8

    # Finite temperature
    BETA_CAP = 1e6
    THERMAL_RTOL = 1e-10

    # Linear programming
    LP_REFACTOR_EVERY = 50
    LP_OPT_TOL = 1e-9
    LP_PIVOT_TOL = 1e-9

    # Finite-size experiment
    F_GRID_MIN = 1e-4
    F_GRID_MAX = 0.5
    F_GRID_POINTS = 21
    FIT_WINDOW = 3e-2
    NODE_SAMPLE = 50

    def validate(self):
        """Validate configuration"""
        if self.WORKERS < 1:
            raise ValueError("CAVITY_WORKERS must be >= 1")
        if self.LOG_LEVEL not in {"TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unknown CAVITY_LOG_LEVEL: {self.LOG_LEVEL}")
        if self.F_GRID_POINTS % 2 == 0:
            raise ValueError("F_GRID_POINTS must be odd (symmetric grid plus 0)")
        logger.debug("✅ Configuration validated")
        return True


config = Config()
