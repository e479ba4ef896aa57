"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

import contextlib
import time

RESULTS = {}


@contextlib.contextmanager
def criterion(number, title, limit=None):
    """Record PASS/FAIL for a criterion; a runtime ``limit`` in seconds is part of the check."""
    start = time.perf_counter()
    detail = {}
    try:
        yield detail
        elapsed = time.perf_counter() - start
        if limit is not None:
            assert elapsed < limit, f"took {elapsed:.1f}s, limit {limit}s"
    except BaseException as exc:
        RESULTS[number] = ("FAIL", title, time.perf_counter() - start, f"{type(exc).__name__}: {exc}".splitlines()[0])
        raise
    RESULTS[number] = ("PASS", title, time.perf_counter() - start,
                       ", ".join(f"{k}={v}" for k, v in detail.items()))
