"""Backend selection for the matching / AP kernels.

The compiled extension is used when importable. Setting the environment
variable ``DSA_SIM_PURE_PYTHON=1`` forces the pure-Python implementation.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("DSA_SIM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

greedy_match = _impl.greedy_match
average_precision = _impl.average_precision


def get_backend(name: str):
    """Return the kernel module for ``"python"`` or ``"cython"``."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
