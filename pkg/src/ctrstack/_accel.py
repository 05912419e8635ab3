"""Numba availability and the switch that selects the pure-numpy fallback.

Set ``CTRSTACK_DISABLE_NUMBA=1`` before import to force the numpy paths.
"""

from __future__ import annotations

import os

_DISABLED = os.environ.get("CTRSTACK_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return ``None``."""
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, nogil=True)(fn)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
