"""Records one PASS/FAIL line per acceptance criterion."""
import time
from contextlib import contextmanager

RESULTS: dict = {}


@contextmanager
def criterion(k: int, name: str, limit: float):
    """Time the block, fail it if it overruns ``limit`` seconds, and log the outcome."""
    notes: list = []
    t0 = time.perf_counter()
    try:
        yield notes
        secs = time.perf_counter() - t0
        assert secs < limit, f"took {secs:.1f} s, limit {limit} s"
    except BaseException:
        RESULTS[k] = ("FAIL", name, time.perf_counter() - t0, "; ".join(notes))
        print(f"criterion {k}: FAIL {name}")
        raise
    RESULTS[k] = ("PASS", name, secs, "; ".join(notes))
    print(f"criterion {k}: PASS {name} ({secs:.2f} s)")
