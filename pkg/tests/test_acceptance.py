"""Acceptance criteria, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line with its margin (how far
the measured value sits inside the tolerance; negative means outside). Run with
``pytest tests/test_acceptance.py -s`` or ``eigenshield validate --suite all``.
"""

from __future__ import annotations

import pytest

from eigenshield.validation import SUITES

ALL_CHECKS = SUITES["all"]
RUNTIMES: dict[int, float] = {}


@pytest.mark.parametrize("check", ALL_CHECKS, ids=lambda c: c.__name__.removeprefix("check_"))
def test_criterion(check, capsys):
    result = check(seed=0)
    RUNTIMES[result.criterion] = result.seconds
    with capsys.disabled():
        print("\n" + result.line(), flush=True)
    assert result.passed, f"criterion {result.criterion} failed: {result.detail}"


def test_full_suite_runtime_under_ten_minutes(capsys):
    if len(RUNTIMES) != len(ALL_CHECKS):
        pytest.skip("needs every criterion to have run in this session")
    total = sum(RUNTIMES.values())
    with capsys.disabled():
        print(f"\n[{'PASS' if total < 600 else 'FAIL'}] suite runtime: {total:.1f}s of 600s", flush=True)
    assert total < 600
