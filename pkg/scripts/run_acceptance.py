"""Run the ten acceptance criteria and print one verdict line for each.

Exits nonzero if any criterion fails.  Takes a few minutes; extra
arguments are passed through to pytest.
"""

import sys
from pathlib import Path

import pytest

if __name__ == "__main__":
    gate = Path(__file__).resolve().parent.parent / "tests" \
        / "test_acceptance.py"
    sys.exit(pytest.main(["-q", str(gate), *sys.argv[1:]]))
