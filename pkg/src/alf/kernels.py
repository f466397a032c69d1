"""Backend selection for the convolution kernels.

The compiled Cython module is used when it imports; otherwise the numpy
fallback.  Setting ``ALF_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _pykernels

python_backend = _pykernels

try:
    if os.environ.get("ALF_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python backend requested")
    from . import _ckernels as compiled_backend
except ImportError:
    compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND = backend.BACKEND


def available_backends():
    """Backend modules that can be exercised in this process."""
    out = [python_backend]
    if compiled_backend is not None:
        out.insert(0, compiled_backend)
    return out
