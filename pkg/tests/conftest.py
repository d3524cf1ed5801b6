import pytest

_ACCEPTANCE = []


@pytest.fixture
def report():
    """Record one acceptance line; the summary lists them after the run."""

    def _report(number, title, ok, detail=""):
        line = f"acceptance {number:>2}: {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        _ACCEPTANCE.append((number, line))
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)
