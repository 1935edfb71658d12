import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def accept(request):
    """Record one pass/fail line for an acceptance criterion; returns ``passed``."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(criterion: str, passed: bool, detail: str) -> bool:
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
