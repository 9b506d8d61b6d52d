"""Backend selection for the hot blocking-coalition scan.

The compiled extension is used when it imports cleanly; otherwise, or when
``COALFORM_PURE_PYTHON`` is set to a non-empty value, the numpy fallback is
used.  Both expose ``scan_blocking`` and ``first_blocking`` with identical
semantics.
"""
from __future__ import annotations

import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

try:
    from ._ext import blocking as _compiled
except ImportError:  # extension not built
    _compiled = None

if _compiled is not None and not os.environ.get("COALFORM_PURE_PYTHON"):
    BACKEND = "cython"
    _impl = _compiled
else:
    BACKEND = "python"
    _impl = _pykernels

log.debug("blocking-scan backend: %s", BACKEND)

scan_blocking = _impl.scan_blocking
first_blocking = _impl.first_blocking


def available_backends() -> dict:
    backends = {"python": _pykernels}
    if _compiled is not None:
        backends["cython"] = _compiled
    return backends
