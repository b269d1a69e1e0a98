# cython: language_level=3
"""Compiled kernels. See _fallback.py for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int8_t, uint8_t, int32_t, int64_t

cnp.import_array()

cdef enum:
    MOD = 127


def packed_gemm(const uint8_t[:, ::1] a, const int8_t[::1] buf,
                Py_ssize_t k, Py_ssize_t w, Py_ssize_t rb, Py_ssize_t cb):
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t nrb = (k + rb - 1) // rb
    cdef Py_ssize_t ncb = (w + cb - 1) // cb
    if a.shape[1] != k:
        raise ValueError("a.cols != k")
    if buf.shape[0] != nrb * ncb * rb * cb:
        raise ValueError("packed buffer length does not match layout")
    out = np.zeros((m, w), dtype=np.int32)
    cdef int32_t[:, ::1] c = out
    cdef Py_ssize_t jb, ib, i, kk, jj, k0, j0, kmax, jmax
    cdef const int8_t* tile
    cdef int32_t av
    cdef int32_t* crow
    with nogil:
        for jb in range(ncb):
            j0 = jb * cb
            jmax = cb if j0 + cb <= w else w - j0
            for ib in range(nrb):
                k0 = ib * rb
                kmax = rb if k0 + rb <= k else k - k0
                tile = &buf[(jb * nrb + ib) * rb * cb]
                for i in range(m):
                    crow = &c[i, j0]
                    for kk in range(kmax):
                        av = a[i, k0 + kk]
                        if av == 0:
                            continue
                        for jj in range(jmax):
                            crow[jj] += av * tile[kk * cb + jj]
    return out


def row_check(const int32_t[:, ::1] c):
    cdef Py_ssize_t m = c.shape[0]
    cdef Py_ssize_t n = c.shape[1] - 1
    cdef Py_ssize_t i, j
    cdef int64_t tsum, ref
    cdef Py_ssize_t bad = 0
    with nogil:
        for i in range(m):
            tsum = 0
            for j in range(n):
                tsum += c[i, j]
            tsum = ((tsum % MOD) + MOD) % MOD
            ref = ((<int64_t>c[i, n] % MOD) + MOD) % MOD
            if tsum != ref:
                bad += 1
    return bad


def embedding_bag(const int8_t[:, ::1] rows, const float[::1] scales, const float[::1] biases,
                  const int64_t[::1] indices, weights=None):
    cdef Py_ssize_t d = rows.shape[1]
    cdef Py_ssize_t nrows = rows.shape[0]
    cdef Py_ssize_t t, j, idx
    cdef float s, b, wt, v
    cdef bint weighted = weights is not None
    cdef const float[::1] wv
    if weighted:
        wv = weights
    out = np.zeros(d, dtype=np.float32)
    cdef float[::1] r = out
    for t in range(indices.shape[0]):
        idx = indices[t]
        if idx < 0 or idx >= nrows:
            raise IndexError(f"index {idx} out of range for {nrows} rows")
    with nogil:
        for t in range(indices.shape[0]):
            idx = indices[t]
            s = scales[idx]
            b = biases[idx]
            if weighted:
                wt = wv[t]
                for j in range(d):
                    v = s * <float>rows[idx, j]
                    v = v + b
                    v = v * wt
                    r[j] = r[j] + v
            else:
                for j in range(d):
                    v = s * <float>rows[idx, j]
                    v = v + b
                    r[j] = r[j] + v
    return out


def eb_checksum(const float[::1] scales, const float[::1] biases, const int32_t[::1] row_sums,
                const int64_t[::1] indices, weights, Py_ssize_t d):
    cdef Py_ssize_t nrows = scales.shape[0]
    cdef Py_ssize_t t, idx
    cdef double acc = 0.0, term
    cdef bint weighted = weights is not None
    cdef const float[::1] wv
    if weighted:
        wv = weights
    for t in range(indices.shape[0]):
        idx = indices[t]
        if idx < 0 or idx >= nrows:
            raise IndexError(f"index {idx} out of range for {nrows} rows")
    with nogil:
        for t in range(indices.shape[0]):
            idx = indices[t]
            term = <double>scales[idx] * <double>row_sums[idx]
            term = term + <double>d * <double>biases[idx]
            if weighted:
                term = <double>wv[t] * term
            acc = acc + term
    return acc


def eb_abft(const int8_t[:, ::1] rows, const float[::1] scales, const float[::1] biases,
            const int32_t[::1] row_sums, const int64_t[::1] indices, weights=None):
    """Lookup plus both checksum sides in one pass: (r, rSum, cSum)."""
    out = embedding_bag(rows, scales, biases, indices, weights)
    cdef float[::1] r = out
    cdef double rsum = 0.0
    cdef Py_ssize_t j
    for j in range(r.shape[0]):
        rsum = rsum + <double>r[j]
    return out, rsum, eb_checksum(scales, biases, row_sums, indices, weights, rows.shape[1])
