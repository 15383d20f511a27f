"""One test per acceptance criterion, each at its stated tolerance and runtime budget.

Every result line is printed as it runs (visible with -s) and repeated in the terminal summary.
"""
import pytest

from cloudsplit.acceptance import CHECKS, run_check

RESULT_LINES: list[str] = []


@pytest.mark.parametrize("number", sorted(CHECKS), ids=lambda n: f"criterion_{n:02d}")
def test_criterion(number):
    r = run_check(number)
    line = r.line()
    RESULT_LINES.append(line)
    print(line)
    assert r.ok, line
