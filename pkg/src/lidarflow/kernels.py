"""Kernel backend selection.

The compiled Cython extension is used when it imports; otherwise the numpy
implementation takes over. Set ``LIDARFLOW_PURE_PYTHON=1`` to force the
fallback.
"""

import os

from . import _pykernels

BACKENDS = {"python": _pykernels}

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    BACKENDS["cython"] = _ckernels

if os.environ.get("LIDARFLOW_PURE_PYTHON", "") not in ("", "0") or _ckernels is None:
    BACKEND = "python"
else:
    BACKEND = "cython"

_impl = BACKENDS[BACKEND]

zbuffer_select = _impl.zbuffer_select
patch_spread = _impl.patch_spread
grid_nearest = _impl.grid_nearest
project_anchor = _impl.project_anchor


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active one)."""
    return BACKENDS[name or BACKEND]
