import pytest

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def record():
    """Log one PASS/FAIL line per acceptance criterion; returns the verdict."""
    def _record(number, title, ok, detail, elapsed=None, limit=None):
        in_time = limit is None or (elapsed is not None and elapsed <= limit)
        verdict = bool(ok and in_time)
        timing = ""
        if elapsed is not None:
            timing = f" [{elapsed:.1f}s" + (f" / limit {limit:g}s]" if limit is not None else "]")
        line = f"criterion {number:>2} {'PASS' if verdict else 'FAIL'}  {title}: {detail}{timing}"
        _ACCEPTANCE.append(line)
        print(line)
        return verdict
    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
