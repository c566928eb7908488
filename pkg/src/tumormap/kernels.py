"""Select the histogram kernel backend at import time.

The compiled extension is preferred; setting ``TUMORMAP_PURE=1`` forces the
numpy fallback (useful for benchmarking both).
"""
import logging
import os

from . import _fallback

log = logging.getLogger(__name__)

BACKEND = "numpy"
code_histogram = _fallback.code_histogram
compiled_code_histogram = None

try:
    from . import _kernels
except ImportError as exc:  # pragma: no cover - depends on the build
    log.debug("compiled kernels unavailable: %s", exc)
else:
    compiled_code_histogram = _kernels.code_histogram
    if not os.environ.get("TUMORMAP_PURE"):
        BACKEND = "cython"
        code_histogram = _kernels.code_histogram

fallback_code_histogram = _fallback.code_histogram
