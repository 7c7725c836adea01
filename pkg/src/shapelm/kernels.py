"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise the numpy
implementation takes over. Set ``SHAPELM_PURE_PYTHON=1`` to force the
fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SHAPELM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

shrink_rows = _impl.shrink_rows
intersecting_pairs = _impl.intersecting_pairs
