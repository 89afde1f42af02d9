"""Hot kernels with a compiled core and a pure-Python fallback.

The compiled extension is used when it was built and ``THYROFNA_PURE_PYTHON``
is unset; otherwise the run-based Python implementation is selected.
"""
import os

from . import _ccl_py

try:
    if os.environ.get("THYROFNA_PURE_PYTHON"):
        raise ImportError("pure-Python kernels requested")
    from . import _ccl as _ccl_compiled
except ImportError:
    _ccl_compiled = None

BACKEND = "cython" if _ccl_compiled is not None else "python"

if _ccl_compiled is not None:
    label_components = _ccl_compiled.label_components
else:
    label_components = _ccl_py.label_components


def compiled_available() -> bool:
    return _ccl_compiled is not None


__all__ = ["BACKEND", "compiled_available", "label_components"]
