"""Select the compiled kernel module, falling back to numpy.

Set ``LUR_PURE_PYTHON=1`` to force the fallback (used by the benchmark and
the cross-backend tests).
"""
import os

from . import _core_py

if os.environ.get("LUR_PURE_PYTHON") == "1":
    core = _core_py
    BACKEND = "python"
else:
    try:
        from . import _core as core
        BACKEND = "cython"
    except ImportError:  # extension not built
        core = _core_py
        BACKEND = "python"
