"""Numba availability and the switch between compiled and pure-numpy kernels.

Set ``BPPCD_DISABLE_NUMBA=1`` to force the numpy fallback path.
"""

import os

_DISABLED = os.environ.get("BPPCD_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

NUMBA_ENABLED = HAVE_NUMBA and not _DISABLED


def jit(func):
    """Compile ``func`` in nopython mode, or return ``None`` when numba is missing."""
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, nogil=True)(func)
