"""Kernel dispatch: compiled extension when built, numpy fallback otherwise.

Set ``SPINTHERMO_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"

if not os.environ.get("SPINTHERMO_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None
else:
    _compiled = None

if _compiled is not None:
    sequence_p0 = _compiled.sequence_p0
    lab_propagate = _compiled.lab_propagate
    BACKEND = "cython"
else:
    sequence_p0 = _kernels_py.sequence_p0
    lab_propagate = _kernels_py.lab_propagate

__all__ = ["BACKEND", "lab_propagate", "sequence_p0"]
