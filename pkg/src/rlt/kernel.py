"""Backend selection for the martingale kernel.

The compiled extension ``rlt._kernel`` is used when importable; otherwise,
or when ``RLT_PURE_PYTHON`` is set to a non-empty value, the numpy version
in ``rlt._fallback`` is used.  Both expose ``row_step`` and ``advance``.
"""
from __future__ import annotations

import os

from rlt import _fallback

BACKEND = "python"
row_step = _fallback.row_step
advance = _fallback.advance

if not os.environ.get("RLT_PURE_PYTHON"):
    try:
        from rlt import _kernel
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "compiled"
        row_step = _kernel.row_step
        advance = _kernel.advance


def backends():
    """Map backend name to module for every backend available here."""
    found = {"python": _fallback}
    try:
        from rlt import _kernel
    except ImportError:
        pass
    else:
        found["compiled"] = _kernel
    return found
