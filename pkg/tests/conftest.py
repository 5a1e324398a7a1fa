import pytest

_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record a one-line PASS/FAIL verdict, echo it, then assert on it."""

    def verdict(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        _CRITERIA.append(line)
        print(line)
        assert ok, line

    return verdict


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
