"""Nearest-neighbor kernel selection.

Prefers the compiled extension (``latentids._nnsearch``) and falls back to
the blocked NumPy implementation when the extension is missing or when
``LATENTIDS_FORCE_FALLBACK=1`` is set. Both backends implement the same
contract: exact single-NN under Euclidean distance, ties to the lowest
reference index. ``benchmarks/bench_nn.py`` compares them.
"""

from __future__ import annotations

import os

from latentids import _nnsearch_np

if os.environ.get("LATENTIDS_FORCE_FALLBACK") == "1":
    _impl = _nnsearch_np
    BACKEND = "numpy"
else:
    try:
        from latentids import _nnsearch as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _nnsearch_np
        BACKEND = "numpy"

nearest_neighbor = _impl.nearest_neighbor


def backend_name() -> str:
    """Which kernel is active: 'compiled' or 'numpy'."""
    return BACKEND
