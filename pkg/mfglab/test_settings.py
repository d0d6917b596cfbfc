"""
Django settings for testing.
"""

from .settings import *  # noqa: F401,F403

DEBUG = False

SECRET_KEY = "test-secret-key-only-for-testing"

# Test runs never pick up a developer's worker count
MFGLAB = {**MFGLAB, "WORKERS": 2}  # noqa: F405

# Disable logging during tests
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "handlers": {
        "null": {
            "class": "logging.NullHandler",
        },
    },
    "root": {
        "handlers": ["null"],
    },
}
