"""Kernel selection: compiled extension when available, NumPy otherwise.

Set MEMLOOP_NO_EXT=1 to force the fallback (used by the benchmark).
"""

import os

from . import kernels_py

if os.environ.get("MEMLOOP_NO_EXT"):
    _impl = kernels_py
    COMPILED = False
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        COMPILED = True
    except ImportError:
        _impl = kernels_py
        COMPILED = False

all_scores = _impl.all_scores
scores_for_rows = _impl.scores_for_rows
