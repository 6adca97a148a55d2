import time

import pytest

ACCEPTANCE_LINES: list[str] = []


class Criterion:
    """Records one PASS/FAIL line per acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.details: list[str] = []
        self.ok = True
        self.t0 = time.perf_counter()

    def check(self, ok: bool, detail: str) -> None:
        self.details.append(("" if ok else "NOT ") + detail)
        self.ok = self.ok and bool(ok)

    def finish(self, limit_s: float) -> None:
        dt = time.perf_counter() - self.t0
        self.check(dt < limit_s, f"runtime {dt:.1f} s < {limit_s:g} s")
        line = f"[{'PASS' if self.ok else 'FAIL'}] criterion {self.number}: {self.title} | " + "; ".join(self.details)
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert self.ok, line


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
