"""Hot kernels, compiled when available.

The Cython extension ``_core`` is used if it was built; otherwise the numpy
implementation in ``_fallback`` is used. Set ``BDEKIT_PURE_PYTHON=1`` to
force the fallback.
"""

import os

from bdekit._kernels import _fallback

BACKEND = "python"

if os.environ.get("BDEKIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from bdekit._kernels import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback
else:
    _impl = _fallback

im2col = _impl.im2col
col2im = _impl.col2im
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward

__all__ = ["BACKEND", "im2col", "col2im", "maxpool2_forward", "maxpool2_backward"]
