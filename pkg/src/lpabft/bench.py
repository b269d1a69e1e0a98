"""Overhead timing: checksum-protected kernels against their unprotected twins."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass
from statistics import median

import numpy as np

from .embedding import IndexBag, QuantEmbeddingTable, batch_abft_eb, embedding_bag
from .gemm import abft_gemm, encode_weight, pack_encoded_weight, packed_product

MIN_REPS = 5
WARMUP = 2
MIN_SAMPLE_NS = 2_000_000
FLUSH_BYTES = 64 << 20


@dataclass(frozen=True)
class BenchResult:
    kind: str
    label: str
    baselineNanos: float
    abftNanos: float
    repetitions: int

    @property
    def overheadFraction(self) -> float:
        return (self.abftNanos - self.baselineNanos) / self.baselineNanos


def _check_reps(reps):
    if reps < MIN_REPS:
        raise ValueError(f"repetitions must be >= {MIN_REPS}, got {reps}")


def _inner_count(fn) -> int:
    """Calls per sample so that one sample lasts at least MIN_SAMPLE_NS."""
    number = 1
    while True:
        t0 = time.perf_counter_ns()
        for _ in range(number):
            fn()
        if time.perf_counter_ns() - t0 >= MIN_SAMPLE_NS or number >= 1 << 16:
            return number
        number *= 2


def time_pair(baseline, protected, reps: int, before=None):
    """Median per-call nanoseconds of both callables, interleaved per repetition.

    ``before`` runs untimed ahead of every sample (used to flush caches); with
    it set each sample is a single call.
    """
    _check_reps(reps)
    for _ in range(WARMUP):
        baseline()
        protected()
    nb = 1 if before else _inner_count(baseline)
    na = 1 if before else _inner_count(protected)
    tb, ta = [], []
    for _ in range(reps):
        for fn, number, out in ((baseline, nb, tb), (protected, na, ta)):
            if before:
                before()
            t0 = time.perf_counter_ns()
            for _ in range(number):
                fn()
            out.append((time.perf_counter_ns() - t0) / number)
    return median(tb), median(ta)


def bench_gemm_shape(shape, reps: int, rng: np.random.Generator) -> BenchResult:
    m, n, k = shape
    a = rng.integers(0, 256, size=(m, k), dtype=np.uint8)
    b = rng.integers(-128, 128, size=(k, n), dtype=np.int8)
    plain = pack_encoded_weight(b, None)
    encoded = encode_weight(b)
    c_plain = packed_product(a, plain)
    res = abft_gemm(a, encoded)
    if not np.array_equal(c_plain.data, res.cTemp.body) or res.errCount:
        raise RuntimeError(f"baseline and protected GEMM disagree at shape {shape}")
    tb, ta = time_pair(lambda: packed_product(a, plain), lambda: abft_gemm(a, encoded), reps)
    return BenchResult("gemm", f"{m}x{n}x{k}", tb, ta, reps)


class CacheFlusher:
    def __init__(self, nbytes: int = FLUSH_BYTES):
        self.scratch = np.zeros(nbytes // 8, dtype=np.int64)

    def __call__(self):
        self.scratch += 1


def bench_eb(rows: int, d: int, pooling: int, batch: int, reps: int, rng: np.random.Generator,
             flusher: CacheFlusher | None = None, weighted: bool = False) -> BenchResult:
    table = QuantEmbeddingTable.build(
        rng.integers(-128, 128, size=(rows, d), dtype=np.int8),
        rng.uniform(0.005, 0.02, size=rows),
        rng.uniform(-1, 1, size=rows),
    )
    bags = [
        IndexBag(rng.integers(0, rows, size=pooling), rng.uniform(0.5, 1.5, size=pooling) if weighted else None)
        for _ in range(batch)
    ]
    flusher = flusher or CacheFlusher()
    tb, ta = time_pair(
        lambda: [embedding_bag(table, bag) for bag in bags],
        lambda: batch_abft_eb(table, bags),
        reps,
        before=flusher,
    )
    label = f"{rows}x{d}/pool{pooling}/batch{batch}" + ("/weighted" if weighted else "")
    return BenchResult("eb", label, tb, ta, reps)


CSV_COLUMNS = ["kind", "shape_or_dims", "baseline_ns", "abft_ns", "overhead_fraction", "repetitions"]


def results_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        w.writerow([r.kind, r.label, f"{r.baselineNanos:.0f}", f"{r.abftNanos:.0f}",
                    f"{r.overheadFraction:.4f}", r.repetitions])
    return buf.getvalue()
