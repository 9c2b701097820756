"""Inverse-update kernels with a compiled fast path.

At import time the Cython extension ``_fast`` is preferred; the NumPy
module ``_pure`` is the fallback. Set ``COPTDESIGN_FORCE_PURE=1`` to force
the fallback (used by the benchmark and for debugging).
"""

import os

if os.environ.get("COPTDESIGN_FORCE_PURE"):
    from . import _pure as _impl

    BACKEND = "pure"
else:
    try:
        from . import _fast as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        from . import _pure as _impl

        BACKEND = "pure"

downdate_inverse = _impl.downdate_inverse
extend_inverse = _impl.extend_inverse


def backend() -> str:
    """Name of the active kernel implementation: 'compiled' or 'pure'."""
    return BACKEND
