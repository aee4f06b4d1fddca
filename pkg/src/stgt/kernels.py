"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy fallback
is used. Set ``STGT_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("STGT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def scatter_add_rows(values: np.ndarray, index: np.ndarray, n: int) -> np.ndarray:
    """``out[index[e]] += values[e]`` for every row ``e``, in row order."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    index = np.ascontiguousarray(index, dtype=np.int64)
    return _impl.scatter_add_rows(values, index, int(n))


def pairwise_sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    return _impl.pairwise_sqdist(a, b)


def backends() -> dict:
    """Every importable backend keyed by name (used by tests and the benchmark)."""
    found = {"python": _kernels_py}
    try:
        from . import _kernels  # type: ignore[attr-defined]

        found["cython"] = _kernels
    except ImportError:
        pass
    return found
