import pytest

_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line; the test still fails through its own assert."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(criterion: int, passed: bool, detail: str):
        lines.append((criterion, bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(lines, key=lambda t: t[0]):
        terminalreporter.write_line(f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
