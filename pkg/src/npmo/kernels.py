"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it imports; otherwise the
pure-Python module is used. Setting ``NPMO_PURE_PYTHON=1`` forces the
fallback (used by the parity tests and the kernel benchmark).
"""
import os

from . import _kernels_py

if os.environ.get("NPMO_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"

placement_free = _impl.placement_free
sweep = _impl.sweep
astar = _impl.astar
primitive_table = _impl.primitive_table
arrival_blocks = _impl.arrival_blocks

FREE = _kernels_py.FREE
WALL = _kernels_py.WALL
DIRS = _kernels_py.DIRS
