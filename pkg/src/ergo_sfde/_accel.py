"""Numba switch.

Hot kernels are written once as plain Python loops and compiled with numba
when available.  Set ``ERGO_SFDE_NO_NUMBA=1`` to force the vectorised numpy
fallbacks instead (useful for debugging and for the benchmark).
"""
import os

_DISABLED = os.environ.get("ERGO_SFDE_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("numba disabled by ERGO_SFDE_NO_NUMBA")
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False
    _njit = None


def njit(*args, **kwargs):
    """``numba.njit`` when usable, otherwise returns the function untouched."""
    if HAS_NUMBA:
        kwargs.setdefault("cache", True)
        return _njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def use_numba():
    """Whether dispatchers should take the compiled path right now."""
    return HAS_NUMBA and os.environ.get("ERGO_SFDE_NO_NUMBA", "").strip().lower() not in ("1", "true", "yes")
