"""Affine 8-bit quantization, the quantized matrix product and requantization.

A real value x is represented as ``x ~ scale * x_int + bias``.  Activations
(the left GEMM operand) use unsigned 8-bit storage, weights signed 8-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNSIGNED8 = "unsigned8"
SIGNED8 = "signed8"

_DOMAINS = {
    UNSIGNED8: (0, 255, np.uint8),
    SIGNED8: (-128, 127, np.int8),
}


def round_half_away(x):
    """Round to nearest, ties away from zero (vectorised)."""
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


@dataclass(frozen=True)
class QuantizedMatrix:
    data: np.ndarray
    scale: float = 1.0
    bias: float = 0.0

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.size == 0:
            raise ValueError(f"quantized data must be a non-empty 2-D array, got shape {data.shape}")
        if data.dtype not in (np.uint8, np.int8):
            raise TypeError(f"quantized data must be uint8 or int8, got {data.dtype}")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be finite and positive, got {self.scale}")
        if not np.isfinite(self.bias):
            raise ValueError(f"bias must be finite, got {self.bias}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def domain(self) -> str:
        return UNSIGNED8 if self.data.dtype == np.uint8 else SIGNED8


@dataclass(frozen=True)
class RequantParams:
    scaleA: float
    biasA: float
    scaleB: float
    biasB: float
    scaleC: float
    biasC: float
    k: int

    def __post_init__(self):
        if not self.scaleC > 0:
            raise ValueError(f"scaleC must be positive, got {self.scaleC}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")

    @classmethod
    def from_operands(cls, a: QuantizedMatrix, b: QuantizedMatrix, scaleC: float, biasC: float):
        return cls(a.scale, a.bias, b.scale, b.bias, scaleC, biasC, a.cols)


@dataclass(frozen=True)
class IntermediateMatrix:
    """32-bit GEMM accumulator, optionally carrying a trailing checksum column."""

    data: np.ndarray
    hasChecksumColumn: bool = False

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError("intermediate matrix must be 2-D")
        if data.dtype != np.int32:
            raise TypeError(f"intermediate matrix must be int32, got {data.dtype}")
        if self.hasChecksumColumn and data.shape[1] < 2:
            raise ValueError("a checksum-carrying intermediate needs at least 2 columns")
        object.__setattr__(self, "data", data)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        """Logical output width (checksum column excluded)."""
        return self.cols - 1 if self.hasChecksumColumn else self.cols

    @property
    def body(self) -> np.ndarray:
        return self.data[:, : self.width]


def quantize_affine(values, domain: str = UNSIGNED8) -> QuantizedMatrix:
    """Fit scale/bias to the value range and round into the 8-bit domain."""
    if domain not in _DOMAINS:
        raise ValueError(f"unknown domain {domain!r}")
    x = np.asarray(values, dtype=np.float64)
    if x.ndim == 1:
        x = x[np.newaxis, :]
    if x.size == 0:
        raise ValueError("cannot quantize an empty matrix")
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite values")
    lo_q, hi_q, dtype = _DOMAINS[domain]
    lo, hi = float(x.min()), float(x.max())
    if hi > lo:
        scale = (hi - lo) / (hi_q - lo_q)
        bias = lo - scale * lo_q
    else:
        scale, bias = 1.0, lo
    q = np.clip(round_half_away((x - bias) / scale), lo_q, hi_q).astype(dtype)
    return QuantizedMatrix(q, scale, bias)


def dequantize(q: QuantizedMatrix) -> np.ndarray:
    return q.scale * q.data.astype(np.float64) + q.bias


def integer_product(a_data: np.ndarray, b_data: np.ndarray) -> np.ndarray:
    """A_I @ B_I accumulated in 32-bit integers."""
    return np.matmul(a_data.astype(np.int32), b_data.astype(np.int32))


def _combine(c_int, row_sum_a, col_sum_b, sa, ba, sb, bb, k):
    c = np.asarray(c_int, dtype=np.float64)
    out = sa * sb * c
    out += sa * bb * np.asarray(row_sum_a, dtype=np.float64)[:, np.newaxis]
    out += sb * ba * np.asarray(col_sum_b, dtype=np.float64)[np.newaxis, :]
    out += k * ba * bb
    return out


def reference_quantized_product(a: QuantizedMatrix, b: QuantizedMatrix) -> np.ndarray:
    """Real-valued product of two quantized matrices via the rank-1 expansion."""
    if a.cols != b.rows:
        raise ValueError(f"dimension mismatch: {a.rows}x{a.cols} @ {b.rows}x{b.cols}")
    c_int = integer_product(a.data, b.data)
    row_sum_a = a.data.astype(np.int32).sum(axis=1, dtype=np.int32)
    col_sum_b = b.data.astype(np.int32).sum(axis=0, dtype=np.int32)
    return _combine(c_int, row_sum_a, col_sum_b, a.scale, a.bias, b.scale, b.bias, a.cols)


def requantize(c: IntermediateMatrix, rowSumA, colSumB, p: RequantParams) -> QuantizedMatrix:
    """Map the int32 accumulator to unsigned 8-bit output.

    Only the first ``c.width`` columns are read, so a trailing checksum column
    never influences the result. Rounding is half away from zero, followed by
    saturation to [0, 255].
    """
    rowSumA = np.asarray(rowSumA)
    colSumB = np.asarray(colSumB)
    if rowSumA.shape != (c.rows,):
        raise ValueError(f"rowSumA has length {rowSumA.shape}, expected {c.rows}")
    if colSumB.shape != (c.width,):
        raise ValueError(f"colSumB has length {colSumB.shape}, expected {c.width}")
    if not p.scaleC > 0:
        raise ValueError("scaleC must be positive")
    real = _combine(c.body, rowSumA, colSumB, p.scaleA, p.biasA, p.scaleB, p.biasB, p.k)
    q = np.clip(round_half_away((real - p.biasC) / p.scaleC), 0, 255).astype(np.uint8)
    return QuantizedMatrix(q, p.scaleC, p.biasC)
