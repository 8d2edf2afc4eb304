"""Backend selection for the convolution / pooling kernels.

The compiled extension is used when it has been built; otherwise the numpy
fallback is imported. Setting ``SALGUIDE_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _pykernels

if os.environ.get("SALGUIDE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

im2col = _impl.im2col
col2im = _impl.col2im
maxpool_argmax = _impl.maxpool_argmax

__all__ = ["BACKEND", "im2col", "col2im", "maxpool_argmax"]
