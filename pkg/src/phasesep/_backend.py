"""Select the compiled kernels when available, otherwise the NumPy fallback.

Set ``PHASESEP_PURE=1`` to force the fallback.
"""

import os

from . import _kernels_py

kernels = _kernels_py
BACKEND = "python"

if os.environ.get("PHASESEP_PURE") != "1":
    try:
        from . import _kernels as kernels  # noqa: F811
        BACKEND = "compiled"
    except ImportError:
        pass
