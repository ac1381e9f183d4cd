import contextlib
import time

# criterion id -> (passed, detail, seconds); filled by tests/test_acceptance.py
CRITERIA: dict[str, tuple[bool, str, float]] = {}


@contextlib.contextmanager
def criterion(cid: str, detail: list):
    """Record pass/fail for an acceptance criterion; ``detail`` collects summary text."""
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        CRITERIA[cid] = (False, "; ".join(detail), time.perf_counter() - start)
        raise
    CRITERIA[cid] = (True, "; ".join(detail), time.perf_counter() - start)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(CRITERIA):
        ok, detail, secs = CRITERIA[cid]
        terminalreporter.write_line(
            f"{cid} {'PASS' if ok else 'FAIL'} ({secs:.1f}s) {detail}".rstrip())
