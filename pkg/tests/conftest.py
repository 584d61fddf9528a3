"""Acceptance report: one pass/fail line per criterion after the run."""
import pytest

# criterion number -> list of (part, ok, detail)
ACCEPTANCE: dict[int, list] = {}


@pytest.fixture
def record():
    def _record(number, part, ok, detail=""):
        ACCEPTANCE.setdefault(number, []).append((part, bool(ok), detail))
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{name}: {'ok' if good else 'FAIL'} ({d})" if d else
                           f"{name}: {'ok' if good else 'FAIL'}" for name, good, d in parts)
        tr.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {detail}")
