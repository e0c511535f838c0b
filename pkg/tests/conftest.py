import time

import pytest

_LINES: list[str] = []


class Criterion:
    def __init__(self, number: int, name: str):
        self.number, self.name = number, name
        self.start = time.perf_counter()

    def check(self, ok: bool, detail: str, budget_s: float) -> None:
        elapsed = time.perf_counter() - self.start
        ok = bool(ok) and elapsed < budget_s
        line = (f"[{'PASS' if ok else 'FAIL'}] criterion {self.number:>2} {self.name}: "
                f"{detail} ({elapsed:.1f}s, budget {budget_s:g}s)")
        _LINES.append(line)
        print(line)
        assert ok, line


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
