"""
Django settings for radvote_project project.

The project is driven from the command line (``manage.py radvote ...``); there
is no web surface, so only the apps, database and logging are configured.
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get("RADVOTE_SECRET_KEY", "radvote-local-only")

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    "core",
    "geometry",
    "vote_maps",
    "accumulator",
    "pose_pipeline",
    "data_io",
    "cli",
]


# Database
# Run history only; experiment data never goes through the ORM.

DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": BASE_DIR / "db.sqlite3",
        "OPTIONS": {
            "timeout": 30,
        },
    }
}

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

USE_TZ = True

TIME_ZONE = "UTC"


# Logging
# RADVOTE_LOG sets the verbosity (DEBUG, INFO, WARNING, ...).

RADVOTE_LOG_LEVEL = os.environ.get("RADVOTE_LOG", "WARNING").upper()
# The root passes INFO on so per-run log files stay complete; the console filters.
RADVOTE_ROOT_LEVEL = "DEBUG" if RADVOTE_LOG_LEVEL == "DEBUG" else "INFO"

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
            "level": RADVOTE_LOG_LEVEL,
        },
    },
    "root": {
        "handlers": ["console"],
        "level": RADVOTE_ROOT_LEVEL,
    },
    "loggers": {
        "numba": {"level": "WARNING"},
    },
}

# Per-run log files land here (one file per CLI run).
RADVOTE_LOG_DIR = Path(os.environ.get("RADVOTE_LOG_DIR", BASE_DIR / "logs"))

# Create the run history table before a CLI run if it is missing.
RADVOTE_AUTOMIGRATE = True
