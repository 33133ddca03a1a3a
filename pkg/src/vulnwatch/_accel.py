"""Kernel backend selection.

Hot loops (k-means assignment/update, skip-gram SGD) ship twice: a numba
``@njit`` kernel and a pure-numpy twin. The numba path is used when numba
imports and ``VULNWATCH_NUMBA`` is not set to a false value (``0``, ``false``,
``no``, ``off``). Callers can also pick a backend explicitly per call.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

_FALSE = {"0", "false", "no", "off"}


def _numba_requested() -> bool:
    return os.environ.get("VULNWATCH_NUMBA", "1").strip().lower() not in _FALSE


def default_backend() -> str:
    return "numba" if HAVE_NUMBA and _numba_requested() else "numpy"


def resolve_backend(backend=None) -> str:
    if backend is None:
        return default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)

    def wrap(func):
        return func

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrap
