"""Deterministic fault-injection campaigns.

Each trial draws its data and its fault from two independent Philox streams
keyed by ``(seed, trial_index)``, so a trial's outcome does not depend on
which worker runs it or in what order.
"""

from __future__ import annotations

import csv
import enum
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embedding import IndexBag, QuantEmbeddingTable, batch_abft_eb
from .gemm import BlockLayout, encode_weight, packed_product, verify_checksums
from .model import FaultModel

SEED_ENV = "LPABFT_SEED"

_DATA_STREAM = 0
_FAULT_STREAM = 1

EB_SCALE_RANGE = (0.005, 0.02)
EB_BIAS_RANGE = (-1.0, 1.0)


class Target(str, enum.Enum):
    WEIGHT_B = "weight_B"
    INTERMEDIATE_C = "intermediate_C"
    EB_TABLE = "eb_table"
    NONE = "none"


class BitRange(str, enum.Enum):
    ALL = "all"
    HIGH4 = "high4"
    LOW4 = "low4"

    def bits(self, width: int) -> range:
        if self is BitRange.HIGH4:
            return range(width - 4, width)
        if self is BitRange.LOW4:
            return range(0, 4)
        return range(width)


def default_seed() -> int:
    return int(os.environ.get(SEED_ENV, "0"))


def trial_rng(seed: int, trial_index: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(trial_index, stream))
    return np.random.Generator(np.random.Philox(ss))


# --- primitive faults ---------------------------------------------------------

def flip_bit(value: int, bit: int, width: int = 8) -> int:
    """Toggle one bit of a two's-complement integer of the given width."""
    if width not in (8, 32):
        raise ValueError(f"width must be 8 or 32, got {width}")
    if not 0 <= bit < width:
        raise ValueError(f"bit index {bit} outside [0, {width})")
    u = (int(value) & ((1 << width) - 1)) ^ (1 << bit)
    return u - (1 << width) if u >= 1 << (width - 1) else u


def random_replacement(value: int, rng: np.random.Generator, width: int = 8) -> int:
    """A uniformly chosen representable value different from ``value``."""
    offset = int(rng.integers(1, 1 << width))
    u = (int(value) + offset) & ((1 << width) - 1)
    return u - (1 << width) if u >= 1 << (width - 1) else u


# --- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class FaultSpec:
    target: Target = Target.NONE
    model: FaultModel = FaultModel.SINGLE_BIT_FLIP
    bitRange: BitRange = BitRange.ALL
    seed: int = 0
    # inject into raw B before its checksum is computed (negative control)
    beforeEncoding: bool = False

    def __post_init__(self):
        object.__setattr__(self, "target", Target(self.target))
        object.__setattr__(self, "model", FaultModel(self.model))
        object.__setattr__(self, "bitRange", BitRange(self.bitRange))
        if self.beforeEncoding and self.target is not Target.WEIGHT_B:
            raise ValueError("beforeEncoding only applies to target weight_B")


@dataclass(frozen=True)
class GemmWorkload:
    shapes: tuple
    trials: int = 100
    layout: BlockLayout = BlockLayout()

    def __post_init__(self):
        shapes = tuple(tuple(int(x) for x in s) for s in self.shapes)
        if not shapes:
            raise ValueError("gemm workload needs at least one shape")
        for s in shapes:
            if len(s) != 3 or min(s) < 1:
                raise ValueError(f"invalid shape {s}; expected positive (m, n, k)")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        object.__setattr__(self, "shapes", shapes)


@dataclass(frozen=True)
class EbWorkload:
    rows: int = 100_000
    dims: tuple = (64,)
    pooling: int = 100
    batch: int = 10
    trials: int = 100
    exact: bool = False
    weighted: bool = False

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if not dims or min(dims) < 1:
            raise ValueError("dims must be a non-empty list of positive sizes")
        for name in ("rows", "pooling", "batch", "trials"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class CampaignConfig:
    workload: GemmWorkload | EbWorkload
    fault: FaultSpec
    workers: int = 1

    def __post_init__(self):
        gemm_targets = {Target.WEIGHT_B, Target.INTERMEDIATE_C, Target.NONE}
        if isinstance(self.workload, GemmWorkload) and self.fault.target not in gemm_targets:
            raise ValueError(f"target {self.fault.target.value} is not valid for a gemm workload")
        if isinstance(self.workload, EbWorkload) and self.fault.target not in {Target.EB_TABLE, Target.NONE}:
            raise ValueError(f"target {self.fault.target.value} is not valid for an eb workload")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


# --- injection ----------------------------------------------------------------

@dataclass(frozen=True)
class FaultRecord:
    target: Target
    position: tuple | None = None
    before: int | None = None
    after: int | None = None
    bit: int | None = None

    @property
    def empty(self) -> bool:
        return self.position is None


@dataclass
class RunState:
    """Mutable structures of one trial; ``inject`` corrupts one of them in place."""

    b: np.ndarray | None = None
    weight: object | None = None
    ctemp: object | None = None
    table: QuantEmbeddingTable | None = None
    bags: list | None = None


def _corrupt(value: int, spec: FaultSpec, rng, width: int):
    if spec.model is FaultModel.SINGLE_BIT_FLIP:
        bits = spec.bitRange.bits(width)
        bit = int(bits[int(rng.integers(len(bits)))])
        return flip_bit(value, bit, width), bit
    return random_replacement(value, rng, width), None


def inject(state: RunState, spec: FaultSpec, trial_index: int) -> FaultRecord:
    """Corrupt exactly one element of the structure named by ``spec.target``.

    Checksum storage (column n of B and of C_temp) is never hit: the encoded
    column is assumed fault-free.
    """
    if spec.target is Target.NONE:
        return FaultRecord(Target.NONE)
    rng = trial_rng(spec.seed, trial_index, _FAULT_STREAM)

    if spec.target is Target.WEIGHT_B:
        if spec.beforeEncoding:
            if state.b is None:
                raise ValueError("no raw B in run state")
            k, n = state.b.shape
            r, c = int(rng.integers(k)), int(rng.integers(n))
            before = int(state.b[r, c])
            after, bit = _corrupt(before, spec, rng, 8)
            state.b[r, c] = after
            return FaultRecord(spec.target, (r, c), before, after, bit)
        pw = state.weight
        if pw is None:
            raise ValueError("no encoded weight in run state")
        r, c = int(rng.integers(pw.k)), int(rng.integers(pw.n))
        off = pw.packed_index(r, c)
        before = int(pw.buffer[off])
        after, bit = _corrupt(before, spec, rng, 8)
        pw.buffer[off] = after
        return FaultRecord(spec.target, (r, c), before, after, bit)

    if spec.target is Target.INTERMEDIATE_C:
        ct = state.ctemp
        if ct is None:
            raise ValueError("no intermediate matrix in run state")
        i, j = int(rng.integers(ct.rows)), int(rng.integers(ct.width))
        before = int(ct.data[i, j])
        after, bit = _corrupt(before, spec, rng, 32)
        ct.data[i, j] = after
        return FaultRecord(spec.target, (i, j), before, after, bit)

    if spec.target is Target.EB_TABLE:
        table, bags = state.table, state.bags
        if table is None or not bags:
            raise ValueError("no embedding table or bags in run state")
        used = [bag for bag in bags if len(bag)]
        if not used:
            raise ValueError("every bag is empty; nothing to corrupt")
        bag = used[int(rng.integers(len(used)))]
        row = int(bag.indices[int(rng.integers(len(bag)))])
        col = int(rng.integers(table.dim))
        before = int(table.rows[row, col])
        after, bit = _corrupt(before, spec, rng, 8)
        table.rows[row, col] = after
        return FaultRecord(spec.target, (row, col), before, after, bit)

    raise ValueError(f"unknown target {spec.target}")


# --- trials -------------------------------------------------------------------

def gemm_trial(shape, layout: BlockLayout, spec: FaultSpec, trial_index: int) -> bool:
    """One GEMM trial; returns True iff the checksum flagged a row."""
    m, n, k = shape
    rng = trial_rng(spec.seed, trial_index, _DATA_STREAM)
    a = rng.integers(0, 256, size=(m, k), dtype=np.uint8)
    b = rng.integers(-128, 128, size=(k, n), dtype=np.int8)
    state = RunState(b=b)
    if spec.beforeEncoding:
        inject(state, spec, trial_index)
    state.weight = encode_weight(b, layout)
    if spec.target is Target.WEIGHT_B and not spec.beforeEncoding:
        inject(state, spec, trial_index)
    state.ctemp = packed_product(a, state.weight)
    if spec.target is Target.INTERMEDIATE_C:
        inject(state, spec, trial_index)
    return verify_checksums(state.ctemp) > 0


def make_eb_trial_data(wl: EbWorkload, d: int, rng: np.random.Generator):
    rows = rng.integers(-128, 128, size=(wl.rows, d), dtype=np.int8)
    if wl.exact:
        scales = np.ones(wl.rows, dtype=np.float32)
        biases = np.zeros(wl.rows, dtype=np.float32)
    else:
        scales = rng.uniform(*EB_SCALE_RANGE, size=wl.rows).astype(np.float32)
        biases = rng.uniform(*EB_BIAS_RANGE, size=wl.rows).astype(np.float32)
    table = QuantEmbeddingTable.build(rows, scales, biases)
    bags = []
    for _ in range(wl.batch):
        idx = rng.integers(0, wl.rows, size=wl.pooling)
        w = rng.uniform(0.5, 1.5, size=wl.pooling) if wl.weighted else None
        bags.append(IndexBag(idx, w))
    return table, bags


def eb_trial(wl: EbWorkload, d: int, spec: FaultSpec, trial_index: int) -> bool:
    """One EB batch trial; returns True iff any bag in the batch is flagged."""
    rng = trial_rng(spec.seed, trial_index, _DATA_STREAM)
    table, bags = make_eb_trial_data(wl, d, rng)
    inject(RunState(table=table, bags=bags), spec, trial_index)
    return any(r.err for r in batch_abft_eb(table, bags))


def _gemm_task(args):
    return gemm_trial(*args)


def _eb_task(args):
    return eb_trial(*args)


# --- reports ------------------------------------------------------------------

@dataclass(frozen=True)
class GroupStats:
    label: str
    trials: int
    detected: int

    @property
    def notDetected(self) -> int:
        return self.trials - self.detected


@dataclass(frozen=True)
class CampaignReport:
    target: str
    model: str
    bitRange: str
    groups: tuple
    notes: tuple = field(default=())

    @property
    def trials(self) -> int:
        return sum(g.trials for g in self.groups)

    @property
    def detected(self) -> int:
        return sum(g.detected for g in self.groups)

    @property
    def notDetected(self) -> int:
        return self.trials - self.detected

    @property
    def falsePositives(self) -> int:
        return self.detected if self.target == Target.NONE.value else 0

    @property
    def detectionRate(self) -> float:
        return self.detected / self.trials


def _run(tasks, fn, workers):
    if workers == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


def _notes(spec: FaultSpec) -> tuple:
    notes = []
    if spec.target in (Target.WEIGHT_B, Target.INTERMEDIATE_C):
        notes.append("checksum column excluded from injection")
    if spec.beforeEncoding:
        notes.append("fault injected into B before encoding")
    if spec.target is Target.EB_TABLE:
        notes.append("fault injected into a row referenced by the batch")
    return tuple(notes)


def run_gemm_campaign(cfg: CampaignConfig) -> CampaignReport:
    wl, spec = cfg.workload, cfg.fault
    if not isinstance(wl, GemmWorkload):
        raise ValueError("run_gemm_campaign needs a gemm workload")
    tasks = [
        (shape, wl.layout, spec, s * wl.trials + t)
        for s, shape in enumerate(wl.shapes)
        for t in range(wl.trials)
    ]
    hits = _run(tasks, _gemm_task, cfg.workers)
    groups = tuple(
        GroupStats("x".join(map(str, shape)), wl.trials, sum(hits[s * wl.trials:(s + 1) * wl.trials]))
        for s, shape in enumerate(wl.shapes)
    )
    return CampaignReport(spec.target.value, spec.model.value, spec.bitRange.value, groups, _notes(spec))


def run_eb_campaign(cfg: CampaignConfig) -> CampaignReport:
    wl, spec = cfg.workload, cfg.fault
    if not isinstance(wl, EbWorkload):
        raise ValueError("run_eb_campaign needs an eb workload")
    tasks = [
        (wl, d, spec, s * wl.trials + t)
        for s, d in enumerate(wl.dims)
        for t in range(wl.trials)
    ]
    hits = _run(tasks, _eb_task, cfg.workers)
    groups = tuple(
        GroupStats(f"{wl.rows}x{d}/pool{wl.pooling}/batch{wl.batch}", wl.trials,
                   sum(hits[s * wl.trials:(s + 1) * wl.trials]))
        for s, d in enumerate(wl.dims)
    )
    return CampaignReport(spec.target.value, spec.model.value, spec.bitRange.value, groups, _notes(spec))


def run_campaign(cfg: CampaignConfig) -> CampaignReport:
    if isinstance(cfg.workload, GemmWorkload):
        return run_gemm_campaign(cfg)
    return run_eb_campaign(cfg)


def wilson_interval(successes: int, trials: int, alpha: float = 0.05):
    from statsmodels.stats.proportion import proportion_confint

    lo, hi = proportion_confint(successes, trials, alpha=alpha, method="wilson")
    return max(0.0, float(lo)), min(1.0, float(hi))


@dataclass(frozen=True)
class Summary:
    label: str
    trials: int
    detected: int
    rate: float
    ci_low: float
    ci_high: float


def summarize(report: CampaignReport) -> list[Summary]:
    """Rates and Wilson 95% intervals: one row per group, then the total."""
    rows = []
    for label, trials, detected in [(g.label, g.trials, g.detected) for g in report.groups] + [
        ("all", report.trials, report.detected)
    ]:
        if trials < 1:
            raise ValueError("cannot summarize zero trials")
        lo, hi = wilson_interval(detected, trials)
        rows.append(Summary(label, trials, detected, detected / trials, lo, hi))
    return rows


CSV_COLUMNS = [
    "target", "model", "bit_range", "shape_or_dims", "trials", "detected", "not_detected",
    "false_positives", "detection_rate", "ci_low", "ci_high",
]


def report_csv(report: CampaignReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    control = report.target == Target.NONE.value
    for s in summarize(report):
        writer.writerow([
            report.target, report.model, report.bitRange, s.label, s.trials, s.detected,
            s.trials - s.detected, s.detected if control else 0,
            f"{s.rate:.6f}", f"{s.ci_low:.6f}", f"{s.ci_high:.6f}",
        ])
    return buf.getvalue()


def write_report_csv(report: CampaignReport, path) -> Path:
    path = Path(path)
    path.write_text(report_csv(report))
    return path


def render_report(report: CampaignReport) -> str:
    head = f"target={report.target} model={report.model} bit_range={report.bitRange}"
    lines = [head, f"{'group':<28} {'trials':>7} {'detected':>9} {'rate':>8}  95% CI"]
    for s in summarize(report):
        lines.append(
            f"{s.label:<28} {s.trials:>7} {s.detected:>9} {s.rate:>8.2%}  [{s.ci_low:.4f}, {s.ci_high:.4f}]"
        )
    if report.target == Target.NONE.value:
        lines.append(f"false positives: {report.falsePositives}/{report.trials}")
    for note in report.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines)
