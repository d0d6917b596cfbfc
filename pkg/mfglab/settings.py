"""
Django settings for the mfglab project.

The project has no web surface; Django provides the management-command CLI,
the settings layer and the test runner integration. Solver defaults are read
from the environment (optionally a ``.env`` file next to ``manage.py``).
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR / ".env")

SECRET_KEY = os.getenv("DJANGO_SECRET_KEY", "mfglab-local-key-not-used-for-signing")

DEBUG = os.getenv("DJANGO_DEBUG", "False") == "True"

ALLOWED_HOSTS: list = []


# Application definition

INSTALLED_APPS = [
    "grid",
    "forward",
    "linearize",
    "cgo",
    "cauchy",
    "inverse",
    "experiments",
]

# Nothing is persisted through the ORM; runs write field files and JSON reports.
DATABASES: dict = {}

USE_TZ = True

TIME_ZONE = "UTC"

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"


# Output location for runs started without --out
OUTPUT_DIR = Path(os.getenv("MFGLAB_OUTPUT_DIR", str(BASE_DIR / "runs")))


def _env_float(name: str, default: float) -> float:
    return float(os.getenv(name, str(default)))


def _env_int(name: str, default: int) -> int:
    return int(os.getenv(name, str(default)))


# Numerical defaults. Run config files override these per experiment.
MFGLAB = {
    "PICARD_DAMPING": _env_float("MFGLAB_PICARD_DAMPING", 0.5),
    "PICARD_TOL": _env_float("MFGLAB_PICARD_TOL", 1e-8),
    "PICARD_MAX_ITER": _env_int("MFGLAB_PICARD_MAX_ITER", 200),
    "NEWTON_TOL": _env_float("MFGLAB_NEWTON_TOL", 1e-12),
    "NEWTON_MAX_ITER": _env_int("MFGLAB_NEWTON_MAX_ITER", 30),
    "BLOWUP_BOUND": _env_float("MFGLAB_BLOWUP_BOUND", 1e8),
    "NEGATIVE_DENSITY_TOL": _env_float("MFGLAB_NEGATIVE_DENSITY_TOL", 1e-8),
    "REMAINDER_TOL": _env_float("MFGLAB_REMAINDER_TOL", 1e-10),
    "REMAINDER_MAX_ITER": _env_int("MFGLAB_REMAINDER_MAX_ITER", 200),
    "SYMBOL_FLOOR": _env_float("MFGLAB_SYMBOL_FLOOR", 1e-8),
    "OVERFLOW_CAP": _env_float("MFGLAB_OVERFLOW_CAP", 300.0),
    "TIKHONOV_WEIGHT": _env_float("MFGLAB_TIKHONOV_WEIGHT", 1e-6),
    "RECOVERY_COARSENING": _env_int("MFGLAB_RECOVERY_COARSENING", 4),
    "POSITIVITY_FLOOR": _env_float("MFGLAB_POSITIVITY_FLOOR", 1e-6),
    "CAUCHY_MISFIT_TOL": _env_float("MFGLAB_CAUCHY_MISFIT_TOL", 5e-2),
    "DEGENERATE_FRACTION": _env_float("MFGLAB_DEGENERATE_FRACTION", 0.5),
    "SYMMETRY_TOL": _env_float("MFGLAB_SYMMETRY_TOL", 1e-6),
    "RECOVERY_REFINEMENTS": _env_int("MFGLAB_RECOVERY_REFINEMENTS", 3),
    "RECOVERY_MAX_ITER": _env_int("MFGLAB_RECOVERY_MAX_ITER", 10),
    "WORKERS": _env_int("MFGLAB_WORKERS", os.cpu_count() or 1),
}


# Logging

LOG_LEVEL = os.getenv("MFGLAB_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("MFGLAB_LOG_FILE")

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "standard": {
            "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "standard",
        },
    },
    "root": {
        "handlers": ["console"],
        "level": LOG_LEVEL,
    },
}

if LOG_FILE:
    LOGGING["handlers"]["file"] = {
        "class": "logging.FileHandler",
        "filename": LOG_FILE,
        "formatter": "standard",
    }
    LOGGING["root"]["handlers"].append("file")
