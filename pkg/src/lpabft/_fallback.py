"""Pure numpy versions of the hot kernels.

Signatures and results match ``_kernels.pyx`` exactly; the EB kernel adds
terms in bag order in float32 so both backends round identically.
"""

import numpy as np

from .layout import unpack_blocks

MOD = 127


def packed_gemm(a, buf, k, w, rb, cb):
    logical = unpack_blocks(buf, k, w, rb, cb)
    return np.matmul(np.asarray(a, dtype=np.int32), logical.astype(np.int32))


def row_check(c):
    c = np.asarray(c)
    n = c.shape[1] - 1
    tsum = c[:, :n].sum(axis=1, dtype=np.int64)
    return int(np.count_nonzero(tsum % MOD != c[:, n].astype(np.int64) % MOD))


def _check_indices(indices, nrows):
    bad = (indices < 0) | (indices >= nrows)
    if bad.any():
        raise IndexError(f"index {indices[bad][0]} out of range for {nrows} rows")


def embedding_bag(rows, scales, biases, indices, weights=None):
    _check_indices(indices, rows.shape[0])
    d = rows.shape[1]
    out = np.zeros(d, dtype=np.float32)
    for t, i in enumerate(indices):
        v = rows[i].astype(np.float32) * scales[i]
        v += biases[i]
        if weights is not None:
            v *= weights[t]
        out += v
    return out


def eb_checksum(scales, biases, row_sums, indices, weights, d):
    if len(indices) == 0:
        return 0.0
    _check_indices(indices, len(scales))
    terms = scales[indices].astype(np.float64) * row_sums[indices].astype(np.float64)
    terms += float(d) * biases[indices].astype(np.float64)
    if weights is not None:
        terms = weights.astype(np.float64) * terms
    # cumsum adds sequentially, matching the compiled loop
    return float(np.cumsum(terms)[-1])


def eb_abft(rows, scales, biases, row_sums, indices, weights=None):
    r = embedding_bag(rows, scales, biases, indices, weights)
    rsum = float(np.cumsum(r, dtype=np.float64)[-1])
    return r, rsum, eb_checksum(scales, biases, row_sums, indices, weights, rows.shape[1])
