"""Hot-loop dispatch: the compiled extension when importable, else pure Python.

Set ``DCWC_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _purekernels

if os.environ.get("DCWC_PURE_PYTHON") == "1":
    _impl = _purekernels
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _purekernels

BACKEND = "python" if _impl is _purekernels else "cython"

failure_enumeration = _impl.failure_enumeration
subset_inclusion = _impl.subset_inclusion
greatest_fixpoint = _impl.greatest_fixpoint
