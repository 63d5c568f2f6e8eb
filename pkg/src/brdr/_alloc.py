"""Allocator tuning for long training loops.

The jet arrays of a training step are a few hundred kilobytes each.  glibc
serves blocks of that size with fresh ``mmap`` pages and returns them on
free, so every step pays the page-fault cost again.  Raising the mmap and
trim thresholds keeps the memory in the heap and reuses it.
"""

import ctypes
import ctypes.util
import sys

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_THRESHOLD = 1 << 30

_done = False


def tune_allocator() -> bool:
    """Best effort; returns True when the thresholds were applied."""
    global _done
    if _done:
        return True
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        ok = libc.mallopt(_M_MMAP_THRESHOLD, _THRESHOLD) and libc.mallopt(_M_TRIM_THRESHOLD, _THRESHOLD)
    except (OSError, AttributeError):
        return False
    _done = bool(ok)
    return _done
