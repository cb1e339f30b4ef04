"""Allocator tuning for the many short-lived large arrays of conv training."""
from __future__ import annotations

import ctypes
import ctypes.util
import sys

M_TRIM_THRESHOLD = -1
M_MMAP_THRESHOLD = -3

_done = False


def tune_allocator() -> bool:
    """Keep freed blocks in the glibc heap instead of returning them to the OS.

    Without this every im2col buffer is a fresh ``mmap`` plus page faults,
    which roughly doubles step time. Returns ``False`` where glibc is absent.
    """
    global _done
    if _done:
        return True
    if not sys.platform.startswith("linux"):
        return False
    name = ctypes.util.find_library("c")
    if not name:
        return False
    try:
        libc = ctypes.CDLL(name)
        ok = libc.mallopt(M_MMAP_THRESHOLD, 2 ** 30) and libc.mallopt(M_TRIM_THRESHOLD, 2 ** 31 - 1)
    except (OSError, AttributeError):
        return False
    _done = bool(ok)
    return _done
