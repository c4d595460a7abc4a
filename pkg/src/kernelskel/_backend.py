"""Pick the kernel-assembly backend at import time.

The compiled core is used when it was built; set ``KERNELSKEL_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

from . import _kernels_py

if os.environ.get("KERNELSKEL_PURE_PYTHON"):
    _ext = None
else:
    try:
        from . import _kernels_ext as _ext
    except ImportError:
        _ext = None

BACKEND = "cython" if _ext is not None else "python"
assemble_raw = _ext.assemble if _ext is not None else _kernels_py.assemble

INV_DIST = _kernels_py.INV_DIST
MULTIQUADRIC = _kernels_py.MULTIQUADRIC


def backends():
    """Return ``{name: assemble}`` for every available backend."""
    out = {"python": _kernels_py.assemble}
    if _ext is not None:
        out["cython"] = _ext.assemble
    return out
