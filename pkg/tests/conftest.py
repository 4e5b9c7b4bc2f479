import contextlib

RESULTS: dict[int, tuple[bool, str, str]] = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record a pass/fail line for an acceptance criterion; failures still raise."""
    note = {"detail": ""}
    try:
        yield note
    except BaseException as exc:
        RESULTS[number] = (False, title, note["detail"] or f"{type(exc).__name__}: {exc}".splitlines()[0])
        raise
    RESULTS[number] = (True, title, note["detail"])


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, title, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}  {detail}")
