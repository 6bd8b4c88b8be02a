"""Kernel selection.

The compiled Cython kernel is used when it was built; otherwise, or when
``PPCAT_BACKEND=python`` is set, the numpy fallback takes over.  Both expose
``advance`` with identical semantics.
"""

from __future__ import annotations

import logging
import os

from . import _fallback

log = logging.getLogger(__name__)

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _fallback}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled


def available() -> list[str]:
    return list(_BACKENDS)


def get(name: str | None = None):
    """Return the kernel module for ``name`` (default: best available)."""
    if name is None:
        name = os.environ.get("PPCAT_BACKEND") or ("cython" if _compiled is not None else "python")
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} is not available (have {available()})") from None


DEFAULT = "cython" if _compiled is not None else "python"
if _compiled is None:
    log.info("compiled kernels unavailable; using the numpy fallback")
