"""glibc allocator tuning for the training loop.

Rollout batches allocate and free arrays of tens of megabytes every minibatch.
With the default thresholds glibc serves these with fresh ``mmap`` calls and
every page is faulted in again, which on some hosts costs more than the
arithmetic. Raising the mmap and trim thresholds keeps the memory in the heap.
"""
from __future__ import annotations

import ctypes
import ctypes.util
import logging

log = logging.getLogger(__name__)

M_TRIM_THRESHOLD = -1
M_TOP_PAD = -2
M_MMAP_THRESHOLD = -3

_done = False


def tune_allocator() -> bool:
    """Apply the thresholds once per process; returns False where glibc is unavailable."""
    global _done
    if _done:
        return True
    name = ctypes.util.find_library("c")
    try:
        libc = ctypes.CDLL(name)
        mallopt = libc.mallopt
    except (OSError, AttributeError, TypeError):
        return False
    mallopt.argtypes = [ctypes.c_int, ctypes.c_int]
    ok = all(mallopt(opt, val) == 1 for opt, val in (
        (M_MMAP_THRESHOLD, 1 << 30), (M_TRIM_THRESHOLD, 2 ** 31 - 1), (M_TOP_PAD, 256 << 20)))
    _done = ok
    if not ok:
        log.debug("mallopt rejected the allocator thresholds")
    return ok
