"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

from contextlib import contextmanager

RESULTS: dict[int, tuple[str, str]] = {}


@contextmanager
def criterion(number: int, title: str):
    """Record the outcome of the enclosed checks under ``number``.

    The body may append details to the yielded list; they are printed after
    the title.
    """
    details: list[str] = []
    try:
        yield details
    except BaseException as exc:
        if type(exc).__name__ == "Skipped":
            RESULTS[number] = ("SKIP", f"{title}: {exc}")
        else:
            RESULTS[number] = ("FAIL", f"{title}: {'; '.join(details + [repr(exc)[:200]])}")
        print(f"criterion {number}: {RESULTS[number][0]}  {RESULTS[number][1]}")
        raise
    RESULTS[number] = ("PASS", f"{title}" + (f": {'; '.join(details)}" if details else ""))
    print(f"criterion {number}: PASS  {RESULTS[number][1]}")
