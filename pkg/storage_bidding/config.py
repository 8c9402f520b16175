"""Configuration settings."""

import json
import logging
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List

from pydantic_settings import BaseSettings

logger = logging.getLogger(__name__)

PACKAGE_DIR = Path(__file__).resolve().parent
DATA_DIR = PACKAGE_DIR / "data"


class Settings(BaseSettings):
    # Solver tolerances (typical 1e-6 tightened by a factor of 100)
    FEASIBILITY_TOL: float = 1e-8
    OPTIMALITY_TOL: float = 1e-8
    CONIC_MAX_ITERS: int = 200
    NLP_MAX_ITERS: int = 500
    TIME_LIMIT: float = 600.0

    # Multistart (16 starts for the full comparison runs)
    MULTISTART_COUNT: int = 1
    MULTISTART_RADIUS: float = 0.6
    SEED: int = 2024

    # Market model
    THERMAL_SCREEN_THRESHOLD: float = 0.85
    ACTIVE_PRICE_WIDTH: float = 1000.0
    REACTIVE_PRICE_WIDTH: float = 300.0
    BOUND_WIDENING_FACTOR: float = 10.0

    # Technique defaults
    DEFAULT_EPS_SD_R: float = 1.0
    DEFAULT_EPS_CS_R: float = 0.01
    DEFAULT_EPS_CS_AR: float = 1e-3
    DEFAULT_EPS_SM: float = 1e-4
    DEFAULT_PI_PF_SD: float = 100.0
    DEFAULT_PI_PF_CS: float = 10.0
    DEFAULT_PI_DISCRETE: float = 100.0
    DEFAULT_STEPS: int = 8

    # Storage unit
    STORAGE_CAPACITY: float = 1.0
    STORAGE_RATING: float = 0.6
    STORAGE_ETA_CH: float = 0.9
    STORAGE_ETA_DIS: float = 0.9
    STORAGE_INITIAL_SOE: float = 0.5

    # Output
    REPORT_DIR: str = "reports"
    LOG_LEVEL: str = "INFO"
    LOG_FILE: str = ""

    def validate_settings(self) -> None:
        errors: List[str] = []
        if self.FEASIBILITY_TOL <= 0 or self.OPTIMALITY_TOL <= 0:
            errors.append("Solver tolerances must be positive")
        if self.CONIC_MAX_ITERS < 1 or self.NLP_MAX_ITERS < 1:
            errors.append("Iteration limits must be at least 1")
        if self.MULTISTART_COUNT < 1:
            errors.append("MULTISTART_COUNT must be at least 1")
        if not 0 < self.THERMAL_SCREEN_THRESHOLD <= 1:
            errors.append("THERMAL_SCREEN_THRESHOLD must lie in (0, 1]")
        if self.ACTIVE_PRICE_WIDTH < 0 or self.REACTIVE_PRICE_WIDTH < 0:
            errors.append("Price widths must be nonnegative")
        if self.DEFAULT_STEPS < 2:
            errors.append("DEFAULT_STEPS must be at least 2")
        if errors:
            raise ValueError("Configuration errors:\n" + "\n".join(f"  - {e}" for e in errors))

    class Config:
        env_file = ".env"
        env_prefix = "BILEVEL_"
        extra = "ignore"


@lru_cache()
def get_settings() -> Settings:
    return Settings()


settings = get_settings()


def reload_settings() -> Settings:
    """Re-read the environment into the shared settings object after a late .env load."""
    fresh = Settings()
    for name in Settings.model_fields:
        setattr(settings, name, getattr(fresh, name))
    return settings


DEFAULT_CONFIG: Dict[str, Any] = {
    "techniques": [
        "PD", "PD-S", "SD", "SD-R eps=1", "MC", "CS", "CS-R eps=0.01", "CS-A",
        "CS-AR eps=1e-3", "PF-SD pi=100", "PF-CS pi=10", "SM1 eps=1e-4", "SM2 eps=1e-4",
    ],
    "storage": {
        "capacity": settings.STORAGE_CAPACITY,
        "rating": settings.STORAGE_RATING,
        "eta_ch": settings.STORAGE_ETA_CH,
        "eta_dis": settings.STORAGE_ETA_DIS,
        "initial_soe": settings.STORAGE_INITIAL_SOE,
    },
}


def load_config(path: Path = None) -> Dict[str, Any]:
    """Read config.json from the project root and merge it over the defaults."""
    cfg_path = path or PACKAGE_DIR.parent / "config.json"
    if not cfg_path.exists():
        return DEFAULT_CONFIG
    try:
        with open(cfg_path, "r", encoding="utf-8") as fh:
            user_cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        logger.warning(f"Ignoring unreadable config {cfg_path}: {e}")
        return DEFAULT_CONFIG
    cfg = DEFAULT_CONFIG.copy()
    cfg.update(user_cfg)
    if isinstance(user_cfg.get("storage"), dict):
        merged = DEFAULT_CONFIG["storage"].copy()
        merged.update(user_cfg["storage"])
        cfg["storage"] = merged
    return cfg
