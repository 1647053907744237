"""Hot-kernel dispatch: compiled extension when available, NumPy otherwise.

Set UWBINVERT_FORCE_FALLBACK=1 to skip the compiled core (used by the
benchmark and the parity tests).
"""

import os

from .fallback import MU0, EPS0
from . import fallback

if os.environ.get("UWBINVERT_FORCE_FALLBACK"):
    _core = None
else:
    try:
        from . import _core
    except ImportError:
        _core = None

HAVE_COMPILED = _core is not None
ACTIVE_IMPL = "compiled" if HAVE_COMPILED else "python"

if HAVE_COMPILED:
    kernel_reflectivity = _core.reflectivity
    kernel_reflectivity_jacobian = _core.reflectivity_jacobian
else:
    kernel_reflectivity = fallback.reflectivity
    kernel_reflectivity_jacobian = fallback.reflectivity_jacobian

__all__ = [
    "MU0",
    "EPS0",
    "HAVE_COMPILED",
    "ACTIVE_IMPL",
    "kernel_reflectivity",
    "kernel_reflectivity_jacobian",
    "fallback",
]
