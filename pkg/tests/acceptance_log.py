"""Pass/fail bookkeeping for the acceptance criteria."""

import time
from contextlib import contextmanager

RESULTS = []


def format_lines():
    return [
        f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {title} ({elapsed:.3f}s, limit {limit:g}s)"
        for num, title, ok, elapsed, limit in RESULTS
    ]


@contextmanager
def criterion(num, title, limit_s):
    start = time.perf_counter()
    ok = False
    try:
        yield
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        within = elapsed < limit_s
        RESULTS.append((num, title, ok and within, elapsed, limit_s))
        print(format_lines()[-1])
    assert within, f"criterion {num} took {elapsed:.3f}s, limit {limit_s}s"
