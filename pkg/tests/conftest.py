import pytest

_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record a named acceptance outcome, then assert it."""

    def check(number, title, ok, detail=""):
        _ACCEPTANCE.append((number, title, bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {title} {detail}")
        assert ok, f"criterion {number} ({title}) failed: {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}")
