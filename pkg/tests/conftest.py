"""Collects acceptance verdicts and prints one line per criterion at the end of the run."""

import pytest

VERDICTS: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def verdict():
    def record(key: str, passed: bool, detail: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] {key}: {detail}"
        VERDICTS.append(line)
        print(line)
        return passed
    return record
