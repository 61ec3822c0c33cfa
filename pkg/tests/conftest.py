import pytest

_LINES = pytest.StashKey[dict]()


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line per acceptance criterion; printed again in the terminal summary."""
    lines = request.config.stash.setdefault(_LINES, {})

    def emit(key, ok: bool, detail: str = ""):
        line = f"criterion {key}: {'PASS' if ok else 'FAIL'}" + (f"  {detail}" if detail else "")
        lines[key] = line
        print(line)
    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines, key=str):
            terminalreporter.write_line(lines[key])
