"""Backend selection for the hot kernels.

The compiled extension is used when it was built; set ``MASKDIFF_PURE_PYTHON=1``
to force the numpy fallback.  ``BACKEND`` names the active implementation.
"""
import os

from . import _pykernels

try:
    if os.environ.get("MASKDIFF_PURE_PYTHON"):
        raise ImportError("pure-Python backend requested")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

potts_conditional_logprobs = _impl.potts_conditional_logprobs

__all__ = ["BACKEND", "potts_conditional_logprobs"]
