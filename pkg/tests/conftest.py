import pytest

from flowmeter.channel import SystemParams
from flowmeter.detector import HypothesisSet
from flowmeter.estimator import UniformAlongD


@pytest.fixture(scope="session")
def params():
    return SystemParams()


@pytest.fixture(scope="session")
def binary_hyps(params):
    return HypothesisSet.along(params, (0.0, 4e-4))


@pytest.fixture(scope="session")
def prior():
    return UniformAlongD(0.0, 1e-3)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def _report(criterion: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
