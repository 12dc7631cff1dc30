"""Thread-count plumbing.

PRESTRAIN_LAB_THREADS caps internal parallelism (FFT workers and any
process fan-out in the CLI sweep commands).  Unset means sequential,
which keeps results bit-reproducible by default.
"""

from __future__ import annotations

import os

_ENV = "PRESTRAIN_LAB_THREADS"


def thread_cap() -> int:
    """Configured cap, >= 1."""
    raw = os.environ.get(_ENV, "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        return 1
    return max(1, value)


def fft_workers() -> int:
    return thread_cap()
