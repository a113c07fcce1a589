"""Convolution kernel backend selection.

Prefers the compiled Cython extension when it was built; falls back to the
numpy implementation otherwise. Set DISTNET_PURE_PYTHON=1 to force the
fallback (useful for benchmarking and for debugging the extension).
"""

import os

if os.environ.get("DISTNET_PURE_PYTHON", "") == "1":
    from .conv_py import BACKEND, conv2d_backward, conv2d_forward
else:
    try:
        from ._conv_cy import BACKEND, conv2d_backward, conv2d_forward
    except ImportError:
        from .conv_py import BACKEND, conv2d_backward, conv2d_forward

__all__ = ["BACKEND", "conv2d_forward", "conv2d_backward"]
