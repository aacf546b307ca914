import numpy as np
import pytest

# criterion -> list of (check name, passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def record(criterion, check, passed, detail=""):
    ACCEPTANCE.setdefault(criterion, []).append((check, bool(passed), detail))
    print(f"[criterion {criterion}] {check}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[crit]
        ok = all(p for _, p, _ in checks)
        tr.write_line(f"criterion {crit:>2}: {'PASS' if ok else 'FAIL'}")
        for name, passed, detail in checks:
            tr.write_line(f"    {'ok  ' if passed else 'FAIL'} {name}  {detail}")
