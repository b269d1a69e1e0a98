"""Checksum-protected int8 GEMM.

The weight matrix B (k x n, signed) is encoded once: each row sum is reduced
mod 127 and appended as column n, and the result is packed into blocks. Every
product against an activation matrix A then yields an int32 accumulator with
n + 1 columns whose last column must agree, mod 127, with the row sum of the
first n. Only B is encoded; A stays untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .layout import pack_blocks, packed_length, packed_offset, unpack_blocks
from .quant import IntermediateMatrix, QuantizedMatrix

MOD = 127
DEFAULT_ROW_BLOCK = 64
DEFAULT_COL_BLOCK = 16
# 255 * 128 * k must stay inside int32 for the accumulator to be exact.
MAX_K = (2**31 - 1) // (255 * 128)


def residue(x):
    """Least non-negative residue mod 127 (scalar or array)."""
    return np.mod(np.asarray(x, dtype=np.int64), MOD)


@dataclass(frozen=True)
class WeightChecksum:
    values: np.ndarray
    modulus: int = MOD

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int64)
        if v.ndim != 1:
            raise ValueError("checksum must be a vector")
        if v.size and (v.min() < 0 or v.max() >= self.modulus):
            raise ValueError("checksum entries must lie in [0, modulus)")
        object.__setattr__(self, "values", v.astype(np.int8))


@dataclass(frozen=True)
class BlockLayout:
    rowBlock: int = DEFAULT_ROW_BLOCK
    colBlock: int = DEFAULT_COL_BLOCK

    def __post_init__(self):
        if self.rowBlock < 1 or self.colBlock < 1:
            raise ValueError(f"block sizes must be positive, got {self.rowBlock}x{self.colBlock}")


@dataclass(frozen=True)
class PackedEncodedWeight:
    """Packed ``[B | checksum]`` (or plain ``B`` when ``encoded`` is False).

    ``buffer`` is a flat int8 array; ``packed_index`` maps logical (row, col)
    into it, which is what fault injection uses to corrupt B after encoding.
    """

    k: int
    n: int
    layout: BlockLayout
    buffer: np.ndarray
    encoded: bool = True

    @property
    def width(self) -> int:
        return self.n + 1 if self.encoded else self.n

    def packed_index(self, r: int, c: int) -> int:
        if not (0 <= r < self.k and 0 <= c < self.width):
            raise IndexError(f"({r}, {c}) outside {self.k}x{self.width}")
        return packed_offset(r, c, self.k, self.layout.rowBlock, self.layout.colBlock)

    def unpack(self) -> np.ndarray:
        return unpack_blocks(self.buffer, self.k, self.width, self.layout.rowBlock, self.layout.colBlock)

    def copy(self) -> "PackedEncodedWeight":
        return PackedEncodedWeight(self.k, self.n, self.layout, self.buffer.copy(), self.encoded)


@dataclass(frozen=True)
class AbftGemmResult:
    cTemp: IntermediateMatrix
    errCount: int


def _signed_weight(b) -> np.ndarray:
    data = b.data if isinstance(b, QuantizedMatrix) else np.asarray(b)
    if data.dtype != np.int8:
        raise TypeError(f"weights must be signed 8-bit, got {data.dtype}")
    if data.ndim != 2 or data.size == 0:
        raise ValueError("weights must be a non-empty 2-D matrix")
    return data


def compute_row_checksums(b) -> WeightChecksum:
    data = _signed_weight(b)
    sums = data.sum(axis=1, dtype=np.int32)
    return WeightChecksum(residue(sums).astype(np.int8))


def pack_encoded_weight(b, cs: WeightChecksum | None, layout: BlockLayout | None = None) -> PackedEncodedWeight:
    """Pack B with its checksum as logical column n.

    Passing ``cs=None`` packs B alone, the unprotected baseline.
    """
    data = _signed_weight(b)
    layout = layout or BlockLayout()
    k, n = data.shape
    if cs is None:
        logical = data
    else:
        if cs.values.shape != (k,):
            raise ValueError(f"checksum length {cs.values.size} != B rows {k}")
        logical = np.empty((k, n + 1), dtype=np.int8)
        logical[:, :n] = data
        logical[:, n] = cs.values
    buf = pack_blocks(logical, layout.rowBlock, layout.colBlock)
    assert buf.size == packed_length(k, logical.shape[1], layout.rowBlock, layout.colBlock)
    return PackedEncodedWeight(k, n, layout, buf, encoded=cs is not None)


def encode_weight(b, layout: BlockLayout | None = None) -> PackedEncodedWeight:
    return pack_encoded_weight(b, compute_row_checksums(b), layout)


def _activation(a) -> np.ndarray:
    data = a.data if isinstance(a, QuantizedMatrix) else np.asarray(a)
    if data.dtype != np.uint8:
        raise TypeError(f"activations must be unsigned 8-bit, got {data.dtype}")
    if data.ndim != 2:
        raise ValueError("activations must be 2-D")
    return np.ascontiguousarray(data)


def packed_product(a, pb: PackedEncodedWeight) -> IntermediateMatrix:
    """int32 product of A with the packed weight (all ``pb.width`` columns)."""
    data = _activation(a)
    if data.shape[1] != pb.k:
        raise ValueError(f"dimension mismatch: A has {data.shape[1]} columns, B has {pb.k} rows")
    if pb.k > MAX_K:
        raise ValueError(f"k={pb.k} exceeds {MAX_K}; int32 accumulation could overflow")
    c = kernels.packed_gemm(data, pb.buffer, pb.k, pb.width, pb.layout.rowBlock, pb.layout.colBlock)
    return IntermediateMatrix(c, hasChecksumColumn=pb.encoded)


def verify_checksums(c: IntermediateMatrix) -> int:
    """Number of rows whose body sum disagrees with the checksum column mod 127."""
    if not c.hasChecksumColumn:
        raise ValueError("intermediate matrix carries no checksum column")
    return int(kernels.row_check(np.ascontiguousarray(c.data)))


def abft_gemm(a, pb: PackedEncodedWeight) -> AbftGemmResult:
    if not pb.encoded:
        raise ValueError("abft_gemm needs an encoded weight; use packed_product for the baseline")
    c = packed_product(a, pb)
    return AbftGemmResult(c, verify_checksums(c))


# ---------------------------------------------------------------------------
# Full dual encoding (row and column checksums, no modulus). Small shapes only;
# used as an independent oracle in tests.

CLEAN = "clean"
LOCATED = "located"
MULTI = "multi-error"


@dataclass(frozen=True)
class DualCheck:
    status: str
    row: int | None = None
    col: int | None = None
    bad_rows: tuple = field(default=())
    bad_cols: tuple = field(default=())


def dual_encode(a, b) -> np.ndarray:
    """C' = A' B' with A' = [A; colsum(A)] and B' = [B, rowsum(B)], in int32."""
    a_data = a.data if isinstance(a, QuantizedMatrix) else np.asarray(a)
    b_data = b.data if isinstance(b, QuantizedMatrix) else np.asarray(b)
    if a_data.shape[1] != b_data.shape[0]:
        raise ValueError(f"dimension mismatch: {a_data.shape} @ {b_data.shape}")
    if max(a_data.shape + b_data.shape) > 64:
        raise ValueError("dual-encoded check is limited to dimensions <= 64")
    a32 = a_data.astype(np.int32)
    b32 = b_data.astype(np.int32)
    a_enc = np.vstack([a32, a32.sum(axis=0, dtype=np.int32)])
    b_enc = np.hstack([b32, b32.sum(axis=1, dtype=np.int32)[:, np.newaxis]])
    return np.matmul(a_enc, b_enc)


def locate_fault(cprime: np.ndarray) -> DualCheck:
    cprime = np.asarray(cprime, dtype=np.int64)
    m, n = cprime.shape[0] - 1, cprime.shape[1] - 1
    col_ok = cprime[m, :n] == cprime[:m, :n].sum(axis=0)
    row_ok = cprime[:m, n] == cprime[:m, :n].sum(axis=1)
    bad_rows = tuple(int(i) for i in np.flatnonzero(~row_ok))
    bad_cols = tuple(int(j) for j in np.flatnonzero(~col_ok))
    if not bad_rows and not bad_cols:
        return DualCheck(CLEAN)
    if len(bad_rows) == 1 and len(bad_cols) == 1:
        return DualCheck(LOCATED, bad_rows[0], bad_cols[0], bad_rows, bad_cols)
    return DualCheck(MULTI, None, None, bad_rows, bad_cols)


def reference_dual_encoded_check(a, b, fault=None) -> DualCheck:
    """Encode both checksums, optionally add ``delta`` at ``fault=(i, j, delta)``, then locate."""
    cprime = dual_encode(a, b)
    if fault is not None:
        i, j, delta = fault
        cprime[i, j] += np.int64(delta)
    return locate_fault(cprime)
