"""Kernel backend selection.

The compiled Cython extension is used when it imports; otherwise the NumPy
fallback is used.  ``AUGMEM_BACKEND=python`` forces the fallback and
``AUGMEM_BACKEND=compiled`` makes a missing extension an import error.
"""

import contextlib
import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None


def available():
    names = ["python"]
    if _compiled is not None:
        names.insert(0, "compiled")
    return names


def _resolve(name):
    if name in ("auto", "", None):
        return _compiled if _compiled is not None else _pykernels
    if name == "python":
        return _pykernels
    if name == "compiled":
        if _compiled is None:
            raise ImportError("augmem._kernels is not built; run `pip install -e . --no-build-isolation`")
        return _compiled
    raise ValueError(f"unknown backend {name!r}; expected auto, compiled or python")


kernels = _resolve(os.environ.get("AUGMEM_BACKEND", "auto"))
log.debug("augmem kernel backend: %s", kernels.NAME)


def name():
    return kernels.NAME


def set_backend(which):
    global kernels
    kernels = _resolve(which)
    return kernels.NAME


@contextlib.contextmanager
def use_backend(which):
    """Temporarily switch backends (benchmarks and cross-backend tests)."""
    global kernels
    previous = kernels
    kernels = _resolve(which)
    try:
        yield kernels.NAME
    finally:
        kernels = previous
