"""Run the twelve acceptance criteria and print one PASS/FAIL line each."""

import sys
from pathlib import Path

import pytest

if __name__ == "__main__":
    here = Path(__file__).resolve().parent.parent / "tests" / "test_acceptance.py"
    sys.exit(pytest.main([str(here), "-q", "-p", "no:cacheprovider"]))
