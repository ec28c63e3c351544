"""Select the numba or pure-numpy implementation of the hot kernels.

Set ``SHALLOWSTAT_NO_NUMBA=1`` in the environment to force the numpy path.
The flag is read once, at import time.
"""

import os

NUMBA_DISABLED = os.environ.get("SHALLOWSTAT_NO_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if NUMBA_DISABLED:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def backend_name():
    return "numba" if HAVE_NUMBA else "numpy"
