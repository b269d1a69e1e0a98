"""Quantized EmbeddingBag with a row-sum checksum.

Each table row is ``d`` signed bytes with its own float32 scale and bias.
Integer row sums are precomputed once; a lookup over the bag I is accepted
when

    sum_j R[j]  ==  sum_{i in I} (scale_i * rowsum_i + d * bias_i)

holds within a relative tolerance of 1e-5.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels

RELATIVE_BOUND = 1e-5

MAGIC = b"ABEB"
VERSION = 1
_HEADER = struct.Struct("<4sHQI")


class TableFormatError(ValueError):
    pass


def precompute_row_sums(rows) -> np.ndarray:
    rows = np.asarray(rows)
    return rows.sum(axis=1, dtype=np.int32)


@dataclass
class QuantEmbeddingTable:
    rows: np.ndarray
    scales: np.ndarray
    biases: np.ndarray
    rowSums: np.ndarray

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.int8)
        self.scales = np.ascontiguousarray(self.scales, dtype=np.float32)
        self.biases = np.ascontiguousarray(self.biases, dtype=np.float32)
        self.rowSums = np.ascontiguousarray(self.rowSums, dtype=np.int32)
        if self.rows.ndim != 2 or self.rows.shape[0] < 1 or self.rows.shape[1] < 1:
            raise ValueError(f"table must be a non-empty R x d matrix, got {self.rows.shape}")
        r = self.rows.shape[0]
        for name in ("scales", "biases", "rowSums"):
            if getattr(self, name).shape != (r,):
                raise ValueError(f"{name} must have length {r}")
        if not (np.all(np.isfinite(self.scales)) and np.all(np.isfinite(self.biases))):
            raise ValueError("scales and biases must be finite")

    @classmethod
    def build(cls, rows, scales, biases) -> "QuantEmbeddingTable":
        rows = np.asarray(rows, dtype=np.int8)
        return cls(rows, scales, biases, precompute_row_sums(rows))

    @property
    def num_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def verify_row_sums(self) -> np.ndarray:
        """Indices of rows whose stored sum disagrees with the data."""
        return np.flatnonzero(precompute_row_sums(self.rows) != self.rowSums)


@dataclass
class IndexBag:
    indices: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64).reshape(-1)
        if self.weights is not None:
            self.weights = np.ascontiguousarray(self.weights, dtype=np.float32).reshape(-1)
            if self.weights.shape != self.indices.shape:
                raise ValueError("weights and indices differ in length")

    def __len__(self):
        return self.indices.size

    def validate(self, table: QuantEmbeddingTable):
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= table.num_rows):
            bad = self.indices[(self.indices < 0) | (self.indices >= table.num_rows)][0]
            raise IndexError(f"index {bad} out of range for table with {table.num_rows} rows")


@dataclass(frozen=True)
class EbCheckedResult:
    r: np.ndarray
    rSum: float
    cSum: float
    err: bool


def embedding_bag(table: QuantEmbeddingTable, bag: IndexBag, precision: str = "float32") -> np.ndarray:
    """Pooled lookup.

    ``float32`` accumulates like the production operator (compiled kernel when
    available); ``float64`` is a high-precision reference path.
    """
    if precision == "float64":
        bag.validate(table)
        idx = bag.indices
        terms = (table.scales[idx, np.newaxis].astype(np.float64) * table.rows[idx]
                 + table.biases[idx, np.newaxis].astype(np.float64))
        if bag.weights is not None:
            terms *= bag.weights[:, np.newaxis].astype(np.float64)
        return terms.sum(axis=0) if len(bag) else np.zeros(table.dim)
    if precision != "float32":
        raise ValueError(f"precision must be 'float32' or 'float64', got {precision!r}")
    if len(bag) == 0:
        return np.zeros(table.dim, dtype=np.float32)
    return kernels.embedding_bag(table.rows, table.scales, table.biases, bag.indices, bag.weights)


def embedding_bag_exact(table: QuantEmbeddingTable, bag: IndexBag) -> np.ndarray:
    """Integer-only lookup (scales and biases ignored), int64 accumulation."""
    bag.validate(table)
    return table.rows[bag.indices].astype(np.int64).sum(axis=0)


def checksum_sum(table: QuantEmbeddingTable, bag: IndexBag) -> float:
    """Sum of (w *) (scale * rowSum + d * bias) over the bag, float64 in bag order."""
    return kernels.eb_checksum(table.scales, table.biases, table.rowSums, bag.indices, bag.weights, table.dim)


def exceeds_bound(rsum: float, csum: float, bound: float = RELATIVE_BOUND) -> bool:
    return abs(rsum - csum) > bound * max(abs(rsum), abs(csum), 1.0)


def abft_embedding_bag(table: QuantEmbeddingTable, bag: IndexBag, bound: float = RELATIVE_BOUND,
                       precision: str = "float32") -> EbCheckedResult:
    if precision == "float32" and len(bag):
        r, rsum, csum = kernels.eb_abft(table.rows, table.scales, table.biases, table.rowSums,
                                        bag.indices, bag.weights)
        return EbCheckedResult(r, rsum, csum, exceeds_bound(rsum, csum, bound))
    r = embedding_bag(table, bag, precision)
    rsum = float(np.sum(r, dtype=np.float64))
    csum = checksum_sum(table, bag)
    return EbCheckedResult(r, rsum, csum, exceeds_bound(rsum, csum, bound))


def batch_abft_eb(table: QuantEmbeddingTable, bags, bound: float = RELATIVE_BOUND,
                  precision: str = "float32") -> list:
    """Check every bag independently.

    An invalid bag does not abort the batch: its slot holds the IndexError.
    """
    out = []
    for bag in bags:
        try:
            out.append(abft_embedding_bag(table, bag, bound, precision))
        except IndexError as exc:
            out.append(exc)
    return out


# --- binary container -------------------------------------------------------

def _record_dtype(d: int) -> np.dtype:
    return np.dtype([("data", "i1", (d,)), ("scale", "<f4"), ("bias", "<f4")])


def save_table(table: QuantEmbeddingTable, path) -> None:
    r, d = table.rows.shape
    rec = np.empty(r, dtype=_record_dtype(d))
    rec["data"] = table.rows
    rec["scale"] = table.scales
    rec["bias"] = table.biases
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, r, d))
        f.write(rec.tobytes())
        f.write(table.rowSums.astype("<i4").tobytes())


def load_table(path, validate: bool = True) -> QuantEmbeddingTable:
    """Read a table file. ``validate=False`` skips the row-sum integrity check."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TableFormatError("file too short for header")
    magic, version, r, d = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise TableFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise TableFormatError(f"unsupported version {version}")
    if r < 1 or d < 1:
        raise TableFormatError(f"empty table ({r} x {d})")
    dt = _record_dtype(d)
    expected = _HEADER.size + r * dt.itemsize + 4 * r
    if len(raw) != expected:
        raise TableFormatError(f"file is {len(raw)} bytes, expected {expected}")
    rec = np.frombuffer(raw, dtype=dt, count=r, offset=_HEADER.size)
    sums = np.frombuffer(raw, dtype="<i4", count=r, offset=_HEADER.size + r * dt.itemsize)
    table = QuantEmbeddingTable(rec["data"].copy(), rec["scale"].copy(), rec["bias"].copy(), sums.copy())
    if validate:
        bad = table.verify_row_sums()
        if bad.size:
            raise TableFormatError(f"{bad.size} row sum(s) inconsistent, first at row {bad[0]}")
    return table


def read_bags(path) -> list[IndexBag]:
    """One bag per line: whitespace-separated ``index`` or ``index:weight``.

    A lone ``-`` is an empty bag; ``#`` starts a comment and blank lines are
    skipped. Entries on one line are either all weighted or all unweighted.
    """
    bags = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        tokens = line.split("#", 1)[0].split()
        if not tokens:
            continue
        if tokens == ["-"]:
            bags.append(IndexBag(np.empty(0, dtype=np.int64)))
            continue
        weighted = [":" in t for t in tokens]
        try:
            if all(weighted):
                pairs = [t.split(":", 1) for t in tokens]
                bags.append(IndexBag([int(i) for i, _ in pairs], [float(w) for _, w in pairs]))
            elif not any(weighted):
                bags.append(IndexBag([int(t) for t in tokens]))
            else:
                raise ValueError("mixes weighted and unweighted entries")
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return bags
