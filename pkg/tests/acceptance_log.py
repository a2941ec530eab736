"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

import functools
import time

RESULTS: dict[int, str] = {}


def criterion(number: int, title: str):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                fn(*args, **kwargs)
            except BaseException as exc:
                line = f"criterion {number} FAIL ({time.perf_counter() - t0:.1f}s): {title}: {type(exc).__name__}"
                RESULTS[number] = line
                print(line)
                raise
            line = f"criterion {number} PASS ({time.perf_counter() - t0:.1f}s): {title}"
            RESULTS[number] = line
            print(line)
        return run
    return wrap
