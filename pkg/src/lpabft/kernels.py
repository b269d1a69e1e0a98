"""Kernel backend selection.

The compiled extension is used when importable; otherwise (or when
``LPABFT_BACKEND=python``) the numpy fallback is used. Both expose
``packed_gemm``, ``row_check``, ``embedding_bag``, ``eb_checksum`` and ``eb_abft``.
"""

import os

from . import _fallback

fallback = _fallback

try:
    from . import _kernels as compiled
except ImportError:  # pragma: no cover - exercised on installs without the extension
    compiled = None

if os.environ.get("LPABFT_BACKEND", "").lower() == "python" or compiled is None:
    active = fallback
    BACKEND = "python"
else:
    active = compiled
    BACKEND = "cython"


def backends():
    """Map backend name -> module for every backend available in this install."""
    out = {"python": fallback}
    if compiled is not None:
        out["cython"] = compiled
    return out


def packed_gemm(a, buf, k, w, rb, cb):
    return active.packed_gemm(a, buf, k, w, rb, cb)


def row_check(c):
    return active.row_check(c)


def embedding_bag(rows, scales, biases, indices, weights=None):
    return active.embedding_bag(rows, scales, biases, indices, weights)


def eb_checksum(scales, biases, row_sums, indices, weights, d):
    return active.eb_checksum(scales, biases, row_sums, indices, weights, d)


def eb_abft(rows, scales, biases, row_sums, indices, weights=None):
    return active.eb_abft(rows, scales, biases, row_sums, indices, weights)
