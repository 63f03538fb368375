"""Optional numba acceleration for the sampler kernels.

Set ``ODBAYES_DISABLE_NUMBA=1`` before import to run every kernel as plain
Python/NumPy. Both paths consume the random stream identically, so a given
seed yields the same draws either way.
"""

import os

DISABLE_ENV = "ODBAYES_DISABLE_NUMBA"

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _disabled_by_env():
    return os.environ.get(DISABLE_ENV, "").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = numba is not None and not _disabled_by_env()


def jit(func):
    """Compile ``func`` in nopython mode when acceleration is enabled."""
    if USE_NUMBA:
        return numba.njit(cache=True)(func)
    return func


def backend_name():
    return "numba" if USE_NUMBA else "python"
