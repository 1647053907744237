"""Blind Bayesian recovery of multilayer dielectric profiles and the radar
pulse from ultrawideband frequency-domain measurements."""

from ._kernels import ACTIVE_IMPL, HAVE_COMPILED

__version__ = "0.1.0"
__all__ = ["ACTIVE_IMPL", "HAVE_COMPILED", "__version__"]
