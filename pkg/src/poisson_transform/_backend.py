"""Select the compiled kernels when available, else the numpy fallback.

Set ``POISSON_TRANSFORM_PURE=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
toy_moments = _kernels_py.toy_moments
sample_toy_chain = _kernels_py.sample_toy_chain

if os.environ.get("POISSON_TRANSFORM_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:  # pragma: no cover - depends on the build
        pass
    else:
        BACKEND = "cython"
        toy_moments = _ckernels.toy_moments
        sample_toy_chain = _ckernels.sample_toy_chain
