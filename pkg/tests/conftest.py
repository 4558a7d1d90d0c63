"""Collects acceptance criterion outcomes and prints one line per criterion."""

import time

import pytest

_OUTCOMES = {}


class _Criterion:
    def __init__(self, number, title):
        self.number = number
        self.title = title
        self.detail = ""

    def __enter__(self):
        self.started = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.started
        ok = exc_type is None
        if not ok and not self.detail:
            self.detail = f"{exc_type.__name__}: {exc}".splitlines()[0][:160]
        prev = _OUTCOMES.get(self.number)
        parts = prev["parts"] if prev else []
        parts.append((ok, self.detail, elapsed))
        _OUTCOMES[self.number] = {"title": self.title, "parts": parts}
        return False


@pytest.fixture
def criterion():
    """``with criterion(3, "title") as c: ...; c.detail = "..."``"""
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_OUTCOMES):
        entry = _OUTCOMES[number]
        ok = all(p[0] for p in entry["parts"])
        elapsed = sum(p[2] for p in entry["parts"])
        detail = "; ".join(p[1] for p in entry["parts"] if p[1])
        terminalreporter.write_line(
            f"criterion {number} [{'PASS' if ok else 'FAIL'}] {entry['title']} "
            f"({elapsed:.1f}s) {detail}"
        )
