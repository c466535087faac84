"""Kernel backend selection.

The compiled extension is used when importable; set the environment variable
``PATCHSYNC_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

if os.environ.get("PATCHSYNC_PURE_PYTHON"):
    from ._kernels_py import fennel_stream, frontier
    BACKEND = "python"
else:
    try:
        from ._kernels import fennel_stream, frontier
        BACKEND = "cython"
    except ImportError:  # extension not built
        from ._kernels_py import fennel_stream, frontier
        BACKEND = "python"

__all__ = ["fennel_stream", "frontier", "BACKEND"]
