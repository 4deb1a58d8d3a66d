import ctypes
import os
import sys

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3


def keep_heap_pages():
    """Stop glibc from unmapping large numpy temporaries after every op.

    Conv layers allocate and free buffers of hundreds of MB per step; on
    lazily-backed VMs each fresh mapping costs seconds of page faults.
    Set SPECTRODX_NO_MALLOPT=1 to leave the allocator alone.
    """
    if not sys.platform.startswith("linux") or os.environ.get("SPECTRODX_NO_MALLOPT"):
        return False
    try:
        libc = ctypes.CDLL("libc.so.6")
    except OSError:
        return False
    ok = libc.mallopt(_M_MMAP_THRESHOLD, 1 << 30) and libc.mallopt(_M_TRIM_THRESHOLD, 1 << 31)
    return bool(ok)
