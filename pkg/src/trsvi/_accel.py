"""Selects between numba-compiled kernels and the pure-numpy fallback.

Set ``TRSVI_DISABLE_NUMBA=1`` to force the numpy path. ``TRSVI_THREADS`` caps
the number of numba worker threads.
"""

import os

_disabled = os.environ.get("TRSVI_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    import numba

    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        numba.config.THREADING_LAYER = "workqueue"
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _disabled


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise the identity decorator.

    Compilation is lazy, so decorated kernels cost nothing when the numpy path is
    selected.
    """
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda f: f


prange = numba.prange if HAVE_NUMBA else range


def set_threads_from_env():
    threads = os.environ.get("TRSVI_THREADS")
    if not (HAVE_NUMBA and threads):
        return
    n = max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
