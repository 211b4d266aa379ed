"""Numba/numpy backend selection for the hot kernels.

Set GRIDTWIN_NUMBA=0 to force the pure-numpy/Python fallback path.
GRIDTWIN_THREADS caps the numba thread pool (default: all cores).
"""

import os

NUMBA_ENABLED = os.environ.get("GRIDTWIN_NUMBA", "1") not in ("0", "false", "no")

if NUMBA_ENABLED:
    try:
        import numba

        _threads = os.environ.get("GRIDTWIN_THREADS")
        if _threads:
            numba.set_num_threads(max(1, min(int(_threads), numba.config.NUMBA_NUM_THREADS)))
    except ImportError:
        NUMBA_ENABLED = False


def maybe_njit(*args, **kwargs):
    """@njit when the numba backend is active, otherwise leave the function as-is.

    Compiled and interpreted flavors execute the same statements in the same
    order (no fastmath here), so results are bit-identical across backends.
    """
    def wrap(fn):
        if NUMBA_ENABLED:
            import numba
            return numba.njit(fn, **kwargs)
        return fn

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return wrap(args[0])
    return wrap


def backend_name():
    return "numba" if NUMBA_ENABLED else "numpy"
