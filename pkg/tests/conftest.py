from __future__ import annotations

import pytest


@pytest.fixture
def write_day(tmp_path):
    """Write a trades/quotes pair to disk and return their paths."""

    def _write(trades: str, quotes: str, name: str = "day"):
        t = tmp_path / f"{name}_trades.csv"
        q = tmp_path / f"{name}_quotes.csv"
        t.write_text(trades)
        q.write_text(quotes)
        return t, q

    return _write


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
