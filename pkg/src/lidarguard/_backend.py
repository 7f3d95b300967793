"""Kernel backend selection.

Hot loops exist twice: a numba ``@njit`` version and a vectorised numpy
version. ``LIDARGUARD_BACKEND=numpy`` (or a missing numba install) selects the
numpy path at import time; :func:`set_backend` switches at runtime, which the
tests and the benchmark use to compare both.
"""
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_VALID = ("numba", "numpy")
_backend = os.environ.get("LIDARGUARD_BACKEND", "numba" if HAVE_NUMBA else "numpy").lower()
if _backend not in _VALID:
    raise ValueError(f"LIDARGUARD_BACKEND must be one of {_VALID}, got {_backend!r}")
if _backend == "numba" and not HAVE_NUMBA:
    _backend = "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise a no-op decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> None:
    global _backend
    name = name.lower()
    if name not in _VALID:
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


def use_numba() -> bool:
    return _backend == "numba"
