import pytest

# criterion number -> (passed, detail), filled by tests/test_acceptance.py
CRITERIA: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(name: str, ok: bool, detail: str) -> None:
        CRITERIA[name] = (bool(ok), detail)
        print(f"criterion {name}: {'PASS' if ok else 'FAIL'} - {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(CRITERIA, key=lambda s: (int(s.rstrip("abcdefgh")), s)):
        ok, detail = CRITERIA[name]
        terminalreporter.write_line(f"criterion {name}: {'PASS' if ok else 'FAIL'} - {detail}")
