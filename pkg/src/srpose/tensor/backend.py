"""Kernel backend selection.

The compiled Cython module is used when it imports; otherwise the numpy
fallback. Set ``SRPOSE_BACKEND=python`` to force the fallback.
"""
import contextlib
import logging
import os

from . import _fallback

log = logging.getLogger(__name__)

_compiled = None
if os.environ.get("SRPOSE_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        log.debug("compiled kernels unavailable, using numpy fallback")

BACKENDS = {"python": _fallback}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

NAME = "compiled" if _compiled is not None else "python"
kernels = BACKENDS[NAME]


def get(name=None):
    """Return the kernel module called ``name`` (default: the active one)."""
    if name is None:
        return kernels
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {sorted(BACKENDS)}") from None


@contextlib.contextmanager
def use(name):
    """Temporarily switch the active kernels, e.g. for parity tests and benchmarks."""
    global kernels, NAME
    prev = kernels, NAME
    kernels, NAME = get(name), name
    try:
        yield kernels
    finally:
        kernels, NAME = prev
