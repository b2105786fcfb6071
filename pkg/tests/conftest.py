"""Shared test plumbing: the acceptance scoreboard printed after the run."""

# Acceptance tests push one line per numbered check; the summary hook prints
# them in order so the pass/fail record survives pytest's output capture.

ACCEPTANCE_RESULTS: dict[int, str] = {}
ACCEPTANCE_EXPECTED = range(1, 12)


def record_criterion(n: int, ok: bool, detail: str) -> str:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_RESULTS[n] = line
    return line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in ACCEPTANCE_EXPECTED:
        line = ACCEPTANCE_RESULTS.get(n, f"criterion {n:2d}: NOT RUN")
        terminalreporter.write_line(line)
