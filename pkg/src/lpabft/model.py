"""Closed-form detection probabilities and overhead fractions, plus exact
enumeration oracles for the per-row miss probability of a fault in B."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

MOD = 127

# Per-row miss probabilities for a corrupted B element (A uniform on [0, 255]).
BITFLIP_MISS_B = Fraction(3, 256)
RANDOM_MISS_B = Fraction(1018, 32640)


class FaultModel(str, enum.Enum):
    SINGLE_BIT_FLIP = "single_bit_flip"
    RANDOM_VALUE = "random_value"


@dataclass(frozen=True)
class DetectionEstimate:
    probability: float
    isLowerBound: bool = False

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability {self.probability} outside [0, 1]")


def _model(model) -> FaultModel:
    return FaultModel(model)


def _positive(**dims):
    for name, v in dims.items():
        if v < 1:
            raise ValueError(f"{name} must be >= 1, got {v}")


def detect_prob_error_in_B(model, m: int) -> DetectionEstimate:
    """Probability that a corrupted B element is flagged by at least one of m rows."""
    _positive(m=m)
    if _model(model) is FaultModel.SINGLE_BIT_FLIP:
        return DetectionEstimate(1.0 - float(BITFLIP_MISS_B) ** m)
    return DetectionEstimate(1.0 - float(RANDOM_MISS_B) ** m, isLowerBound=True)


def detect_prob_error_in_C(model) -> DetectionEstimate:
    if _model(model) is FaultModel.SINGLE_BIT_FLIP:
        return DetectionEstimate(1.0)
    return DetectionEstimate(1.0 - 1.0 / MOD, isLowerBound=True)


def encode_overhead(side: str, m: int, n: int, k: int) -> float:
    """Extra work fraction of encoding A or B, relative to the 2mnk GEMM."""
    _positive(m=m, n=n, k=k)
    if side == "A":
        return 1 / (2 * n) + 1 / m + 1 / (2 * k)
    if side == "B":
        return 1 / (2 * m) + 1 / n + 1 / (2 * k)
    raise ValueError(f"side must be 'A' or 'B', got {side!r}")


def eb_overhead(m: int, d: int) -> float:
    """Compute overhead of the EB check for pooling size m and dimension d."""
    _positive(m=m, d=d)
    return 1 / d + 1 / (3 * m)


def eb_memory_overhead(p: int, d: int) -> float:
    """Extra memory of 32-bit row sums over a p-bit, d-wide table."""
    _positive(p=p, d=d)
    return 32 / (p * d)


def count_multiples(a: int, mod: int = MOD) -> int:
    """Number of multiples of ``mod`` in (0, a]."""
    if mod < 1:
        raise ValueError("mod must be >= 1")
    if a < 0:
        raise ValueError("a must be non-negative")
    return a // mod


def powers_of_two_divisible(mod: int = MOD, bits: int = 32) -> list[int]:
    """Bit indices l < bits for which mod divides 2**l (empty for odd mod > 1)."""
    return [l for l in range(bits) if (1 << l) % mod == 0]


def _flip8(values: np.ndarray, bit: int) -> np.ndarray:
    return (values.view(np.uint8) ^ np.uint8(1 << bit)).view(np.int8)


def oracle_undetected_fraction_B(model) -> Fraction:
    """Exact per-row miss probability for a fault in one B element.

    A row misses the fault iff 127 divides ``delta * a`` where ``delta`` is the
    change of the B element and ``a`` the A element it meets. Enumerates all
    unsigned ``a``, all signed originals and every corruption the model allows.
    """
    a = np.arange(256, dtype=np.int64)
    orig = np.arange(-128, 128, dtype=np.int64)
    if _model(model) is FaultModel.SINGLE_BIT_FLIP:
        deltas = np.concatenate(
            [_flip8(orig.astype(np.int8), l).astype(np.int64) - orig for l in range(8)]
        )
    else:
        corrupt = orig[np.newaxis, :]
        diff = corrupt - orig[:, np.newaxis]
        deltas = diff[diff != 0]
    # count over (delta, a) pairs; chunked to bound memory at 2**24 cells
    missed = 0
    for chunk in np.array_split(deltas, max(1, deltas.size // 4096)):
        missed += int(np.count_nonzero((chunk[:, np.newaxis] * a[np.newaxis, :]) % MOD == 0))
    return Fraction(missed, deltas.size * a.size)
