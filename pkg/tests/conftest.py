from __future__ import annotations

import pytest

_RESULTS: dict[int, list[tuple[bool, str]]] = {}


class CriterionLog:
    def record(self, number: int, passed: bool, detail: str) -> bool:
        _RESULTS.setdefault(number, []).append((bool(passed), detail))
        return bool(passed)


@pytest.fixture(scope="session")
def criterion():
    return CriterionLog()


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: long-running end-to-end acceptance checks")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        parts = _RESULTS[number]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
