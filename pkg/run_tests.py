#!/usr/bin/env python
"""
Test runner for mfglab without pytest.

    python run_tests.py                 # every app
    python run_tests.py grid forward    # selected apps or test labels
"""

import os
import sys

import django
from django.conf import settings
from django.test.utils import get_runner

APPS = ["grid", "forward", "linearize", "cgo", "cauchy", "inverse", "experiments"]


def run_tests(labels):
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "mfglab.test_settings")
    django.setup()

    TestRunner = get_runner(settings)
    test_runner = TestRunner(verbosity=2, interactive=False)
    failures = test_runner.run_tests(labels)

    if failures:
        sys.exit(1)
    print(f"\nTests passed: {' '.join(labels)}")


if __name__ == "__main__":
    run_tests(sys.argv[1:] or APPS)
