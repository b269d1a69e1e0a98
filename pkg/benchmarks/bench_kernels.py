"""Compare the compiled and numpy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--reps N]

Prints median wall time per call for each kernel and backend, plus the
speedup of the compiled backend. Outputs are checked for equality first.
"""
import argparse
import statistics
import time

import numpy as np

from lpabft import kernels
from lpabft.embedding import QuantEmbeddingTable
from lpabft.gemm import encode_weight


def median_ns(fn, reps):
    fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return statistics.median(samples)


def cases(rng):
    for m, n, k in [(1, 800, 3200), (8, 1024, 1024), (64, 256, 1024)]:
        a = rng.integers(0, 256, (m, k)).astype(np.uint8)
        pb = encode_weight(rng.integers(-128, 128, (k, n)).astype(np.int8))
        rb, cb = pb.layout.rowBlock, pb.layout.colBlock
        yield f"packed_gemm {m}x{n}x{k}", lambda mod, a=a, pb=pb, rb=rb, cb=cb: mod.packed_gemm(
            a, pb.buffer, pb.k, pb.width, rb, cb)
        c = kernels.fallback.packed_gemm(a, pb.buffer, pb.k, pb.width, rb, cb)
        yield f"row_check {m}x{n + 1}", lambda mod, c=c: mod.row_check(c)
    rows = 100_000
    table = QuantEmbeddingTable.build(rng.integers(-128, 128, (rows, 64)).astype(np.int8),
                                      rng.uniform(0.005, 0.02, rows), rng.uniform(-1, 1, rows))
    idx = rng.integers(0, rows, 100)
    w = rng.uniform(0.5, 1.5, 100).astype(np.float32)
    for label, weights in (("embedding_bag d64 pool100", None), ("embedding_bag d64 pool100 weighted", w)):
        yield label, lambda mod, weights=weights: mod.embedding_bag(
            table.rows, table.scales, table.biases, idx, weights)
    yield "eb_abft d64 pool100", lambda mod: mod.eb_abft(
        table.rows, table.scales, table.biases, table.rowSums, idx, None)


def same(x, y):
    if isinstance(x, tuple):
        return all(same(p, q) for p, q in zip(x, y))
    return np.array_equal(x, y)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=21)
    args = ap.parse_args()
    backs = kernels.backends()
    if "cython" not in backs:
        print("compiled extension not built; only the python backend is available")
    names = sorted(backs)
    print(f"{'kernel':<36}" + "".join(f"{n + ' (us)':>14}" for n in names) + f"{'speedup':>10}")
    for label, call in cases(np.random.default_rng(0)):
        outs = [call(backs[n]) for n in names]
        assert all(same(o, outs[0]) for o in outs[1:]), label
        times = {n: median_ns(lambda n=n: call(backs[n]), args.reps) / 1e3 for n in names}
        speed = f"{times['python'] / times['cython']:>9.1f}x" if "cython" in times else ""
        print(f"{label:<36}" + "".join(f"{times[n]:>14.1f}" for n in names) + speed)


if __name__ == "__main__":
    main()
