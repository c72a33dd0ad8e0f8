"""Kernel backend selection.

The compiled extension is preferred; the pure-numpy module is a drop-in
fallback.  Set NQST_BACKEND=py or NQST_BACKEND=c to force one (forcing the
compiled backend raises if the extension is missing).
"""

import os

from . import _kernels_py

_choice = os.environ.get("NQST_BACKEND", "").strip().lower()

if _choice in ("py", "python", "fallback"):
    kernels = _kernels_py
    BACKEND = "py"
elif _choice in ("c", "compiled", "cython"):
    from . import _kernels_c

    kernels = _kernels_c
    BACKEND = "c"
elif _choice == "":
    try:
        from . import _kernels_c

        kernels = _kernels_c
        BACKEND = "c"
    except ImportError:
        kernels = _kernels_py
        BACKEND = "py"
else:
    raise RuntimeError(f"NQST_BACKEND must be 'c' or 'py', got {_choice!r}")
