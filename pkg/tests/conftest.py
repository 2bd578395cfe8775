import numpy as np
import pytest

_ACCEPTANCE = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def accept():
    """Record one pass/fail line for an acceptance criterion and return the verdict."""

    def record(number: int, passed: bool, text: str) -> bool:
        line = f"[acceptance {number}] {'PASS' if passed else 'FAIL'}: {text}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
