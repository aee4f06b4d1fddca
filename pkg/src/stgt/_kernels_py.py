"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Both backends accumulate in row order so results match bit for bit on the
scatter path.
"""
import numpy as np


def scatter_add_rows(values, index, n):
    values = np.asarray(values, dtype=np.float64)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError(f"index out of range for {n} rows")
    out = np.zeros((n, values.shape[1]), dtype=np.float64)
    np.add.at(out, index, values)
    return out


def pairwise_sqdist(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ValueError("row widths differ")
    n, m = a.shape[0], b.shape[0]
    out = np.empty((n, m), dtype=np.float64)
    # Same left-to-right accumulation as the compiled loop.
    diff = a[:, None, :] - b[None, :, :]
    sq = diff * diff
    acc = np.zeros((n, m), dtype=np.float64)
    for k in range(a.shape[1]):
        acc += sq[:, :, k]
    out[...] = acc
    return out
