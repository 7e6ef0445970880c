"""Acceptance criteria at their stated tolerances, one PASS/FAIL line each.

Run with pytest (lines appear in the terminal summary) or directly as a script.
"""

import subprocess
import sys

import pytest

from critlab import acceptance
from critlab.config import DEFAULT_SEED

LINES = []


def _record(line):
    LINES.append(line)
    print(line, flush=True)


@pytest.mark.parametrize("number", sorted(acceptance.CRITERIA))
def test_criterion(number):
    result = acceptance.run_suite(DEFAULT_SEED, only={number})[0]
    _record(result.line())
    assert result.passed, result.details


def _verify_report(tmp_path, tag):
    out = tmp_path / tag
    proc = subprocess.run(
        [sys.executable, "-m", "critlab.cli", "verify", "--no-timestamp", "--out", str(out), "-q"],
        capture_output=True, text=True,
    )
    return proc, (out / "verify_report.json").read_bytes()


def test_verify_reports_are_byte_identical(tmp_path):
    first, a = _verify_report(tmp_path, "a")
    second, b = _verify_report(tmp_path, "b")
    ok = a == b and first.returncode == second.returncode == 0
    _record(f"{'PASS' if ok else 'FAIL'}  criterion 11: verify twice with one seed gives identical reports")
    assert first.stdout.strip().endswith("11/11 criteria passed"), first.stdout
    assert a == b


if __name__ == "__main__":
    results = acceptance.run_suite(DEFAULT_SEED)
    for r in results:
        print(r.line())
    sys.exit(0 if all(r.passed for r in results) else 1)
