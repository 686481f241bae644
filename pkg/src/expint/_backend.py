"""Pick the kernel implementation at import time.

Set ``EXPINT_BACKEND=python`` to force the pure-Python kernels, or
``EXPINT_BACKEND=compiled`` to fail loudly when the extension is missing.
"""
import os

from . import _kernels_py

_choice = os.environ.get("EXPINT_BACKEND", "auto").lower()

if _choice == "python":
    kernels = _kernels_py
else:
    try:
        from . import _kernels as kernels
    except ImportError:
        if _choice == "compiled":
            raise
        kernels = _kernels_py

NAME = "python" if kernels is _kernels_py else "compiled"


def compiled_kernels():
    """Return the compiled kernel module, or None when it was not built."""
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels
