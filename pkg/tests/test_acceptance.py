"""All twelve acceptance criteria at their stated tolerances.

Each criterion prints one PASS/FAIL line with the measured values; the lines
are also repeated in the terminal summary.
"""
import pytest

from sharpen.harness.verify import CRITERIA, verify

RESULTS: list[str] = []


@pytest.mark.parametrize("number,suite", sorted(CRITERIA.items()), ids=[f"{k:02d}-{v}" for k, v in
                                                                         sorted(CRITERIA.items())])
def test_criterion(number, suite):
    res = verify(suite)
    line = f"[{number:2d}] {res.line()}"
    RESULTS.append(line)
    print(line)
    assert res.passed, line
