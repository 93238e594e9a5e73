"""Backend selection for the LIF scan kernels.

The compiled ``_scan`` extension is used when it imports; otherwise the
NumPy implementation in ``_scan_py``. Set ``SPIKEKWS_BACKEND=python`` to
force the fallback.
"""

import os

from . import _scan_py

BACKENDS = {"python": _scan_py}

try:
    from . import _scan as _scan_c
except ImportError:
    _scan_c = None
else:
    BACKENDS["cython"] = _scan_c

if os.environ.get("SPIKEKWS_BACKEND", "").lower() == "python" or _scan_c is None:
    BACKEND = "python"
else:
    BACKEND = "cython"


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    name = name or BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available "
                         f"(have: {sorted(BACKENDS)})") from None


def set_backend(name):
    global BACKEND
    get_backend(name)
    BACKEND = name
