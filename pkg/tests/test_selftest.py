import numpy as np
import pytest

from fsbridge.controller.selftest import CHECKS, CheckResult, format_table, run_selftest


@pytest.mark.parametrize("check", CHECKS, ids=lambda c: c.__name__)
def test_check_passes(check):
    result = check(np.random.default_rng(0))
    assert result.passed, f"{result.name}: {result.detail}"


def test_run_selftest_runs_every_check():
    results = run_selftest(seed=3)
    assert len(results) == len(CHECKS) == 7
    assert len({r.name for r in results}) == 7
    assert all(r.passed for r in results)


def test_format_table():
    table = format_table([CheckResult('short', True, 'ok'), CheckResult('a longer name', False, 'off by 2')])
    lines = table.splitlines()
    assert lines[0].startswith('check')
    assert lines[2] == 'short          PASS    ok'
    assert lines[3] == 'a longer name  FAIL    off by 2'
