import csv
import io

import numpy as np
import pytest

from lpabft.embedding import IndexBag, QuantEmbeddingTable
from lpabft.faultlab import (
    CSV_COLUMNS,
    BitRange,
    CampaignConfig,
    CampaignReport,
    EbWorkload,
    FaultSpec,
    GemmWorkload,
    GroupStats,
    RunState,
    Target,
    flip_bit,
    inject,
    random_replacement,
    report_csv,
    run_campaign,
    run_eb_campaign,
    run_gemm_campaign,
    summarize,
    trial_rng,
)
from lpabft.gemm import encode_weight, packed_product

SMALL_SHAPES = [(1, 16, 32), (3, 20, 9), (8, 64, 64)]


def test_flip_bit_examples():
    assert flip_bit(0, 7) == -128
    assert flip_bit(6, 0) == 7
    assert flip_bit(-1, 31, 32) == 2**31 - 1
    assert flip_bit(0, 31, 32) == -(2**31)


def test_flip_bit_is_an_involution():
    for v in range(-128, 128):
        for bit in range(8):
            once = flip_bit(v, bit)
            assert once != v and -128 <= once <= 127
            assert bin((once ^ v) & 0xFF).count("1") == 1
            assert flip_bit(once, bit) == v


def test_flip_bit_matches_numpy_view():
    vals = np.arange(-128, 128, dtype=np.int8)
    for bit in range(8):
        ref = (vals.view(np.uint8) ^ np.uint8(1 << bit)).view(np.int8)
        assert [flip_bit(int(v), bit) for v in vals] == ref.tolist()


@pytest.mark.parametrize("bit,width", [(8, 8), (-1, 8), (32, 32)])
def test_flip_bit_range(bit, width):
    with pytest.raises(ValueError):
        flip_bit(0, bit, width)


def test_random_replacement_differs_and_stays_in_range():
    rng = np.random.default_rng(3)
    for width, lo, hi in ((8, -128, 127), (32, -(2**31), 2**31 - 1)):
        for v in (lo, 0, hi, 17):
            for _ in range(200):
                r = random_replacement(v, rng, width)
                assert r != v and lo <= r <= hi


def test_bit_range_sets():
    assert list(BitRange.HIGH4.bits(8)) == [4, 5, 6, 7]
    assert list(BitRange.LOW4.bits(8)) == [0, 1, 2, 3]
    assert list(BitRange.ALL.bits(32)) == list(range(32))


def test_trial_streams_are_independent_of_order():
    a = trial_rng(1, 5, 0).integers(0, 1 << 30, 4)
    trial_rng(1, 4, 0).integers(0, 1 << 30, 4)
    assert np.array_equal(a, trial_rng(1, 5, 0).integers(0, 1 << 30, 4))
    assert not np.array_equal(a, trial_rng(1, 5, 1).integers(0, 1 << 30, 4))


def _gemm_state(rng):
    b = rng.integers(-128, 128, (12, 10)).astype(np.int8)
    a = rng.integers(0, 256, (4, 12)).astype(np.uint8)
    st = RunState(b=b.copy(), weight=encode_weight(b))
    st.ctemp = packed_product(a, st.weight)
    return st


def test_inject_none_is_noop(rng):
    st = _gemm_state(rng)
    before = st.weight.buffer.copy(), st.ctemp.data.copy()
    rec = inject(st, FaultSpec(Target.NONE), 0)
    assert rec.empty
    assert np.array_equal(st.weight.buffer, before[0]) and np.array_equal(st.ctemp.data, before[1])


@pytest.mark.parametrize("target", [Target.WEIGHT_B, Target.INTERMEDIATE_C])
@pytest.mark.parametrize("model", ["single_bit_flip", "random_value"])
def test_inject_mutates_exactly_one_element(rng, target, model):
    for trial in range(50):
        st = _gemm_state(rng)
        pristine_b, pristine_c = st.weight.unpack(), st.ctemp.data.copy()
        rec = inject(st, FaultSpec(target, model, seed=11), trial)
        if target is Target.WEIGHT_B:
            diff = np.argwhere(st.weight.unpack() != pristine_b)
            assert np.array_equal(st.ctemp.data, pristine_c)
            assert rec.position[1] < st.weight.n  # checksum column untouched
        else:
            diff = np.argwhere(st.ctemp.data != pristine_c)
            assert np.array_equal(st.weight.unpack(), pristine_b)
            assert rec.position[1] < st.ctemp.width
        assert diff.tolist() == [list(rec.position)]
        assert rec.before != rec.after


def test_inject_is_deterministic(rng):
    st = _gemm_state(rng)
    spec = FaultSpec(Target.WEIGHT_B, seed=42)
    r1 = inject(RunState(weight=st.weight.copy()), spec, 7)
    r2 = inject(RunState(weight=st.weight.copy()), spec, 7)
    r3 = inject(RunState(weight=st.weight.copy()), spec, 8)
    assert r1 == r2
    assert r1 != r3


def test_inject_eb_high4(rng):
    rows = rng.integers(-128, 128, (500, 16)).astype(np.int8)
    for trial in range(100):
        t = QuantEmbeddingTable.build(rows.copy(), np.ones(500), np.zeros(500))
        bags = [IndexBag(rng.integers(0, 500, 20)) for _ in range(3)]
        rec = inject(RunState(table=t, bags=bags), FaultSpec(Target.EB_TABLE, bitRange="high4", seed=1), trial)
        assert rec.bit in (4, 5, 6, 7)
        assert any(rec.position[0] in b.indices for b in bags)
        assert np.argwhere(t.rows != rows).tolist() == [list(rec.position)]


def test_inject_invalid_target():
    with pytest.raises(ValueError):
        inject(RunState(), FaultSpec(Target.EB_TABLE), 0)
    with pytest.raises(ValueError):
        CampaignConfig(GemmWorkload(SMALL_SHAPES, 1), FaultSpec(Target.EB_TABLE))
    with pytest.raises(ValueError):
        CampaignConfig(EbWorkload(rows=10), FaultSpec(Target.WEIGHT_B))
    with pytest.raises(ValueError):
        FaultSpec(Target.INTERMEDIATE_C, beforeEncoding=True)


def test_workload_validation():
    with pytest.raises(ValueError):
        GemmWorkload([(1, 0, 3)], 1)
    with pytest.raises(ValueError):
        GemmWorkload(SMALL_SHAPES, 0)
    with pytest.raises(ValueError):
        EbWorkload(dims=())


def test_gemm_control_is_pure():
    rep = run_gemm_campaign(CampaignConfig(GemmWorkload(SMALL_SHAPES, 40), FaultSpec(Target.NONE, seed=3)))
    assert rep.trials == 120 and rep.detected == 0 and rep.falsePositives == 0


def test_gemm_c_always_detected():
    rep = run_campaign(CampaignConfig(GemmWorkload(SMALL_SHAPES, 40), FaultSpec(Target.INTERMEDIATE_C, seed=3)))
    assert rep.detected == rep.trials == 120


def test_injection_before_encoding_is_invisible():
    spec = FaultSpec(Target.WEIGHT_B, seed=3, beforeEncoding=True)
    rep = run_campaign(CampaignConfig(GemmWorkload(SMALL_SHAPES, 40), spec))
    assert rep.detected == 0
    assert "before encoding" in " ".join(rep.notes)


def test_campaign_determinism_across_workers():
    wl = GemmWorkload(SMALL_SHAPES, 20)
    spec = FaultSpec(Target.WEIGHT_B, "random_value", seed=9)
    serial = run_campaign(CampaignConfig(wl, spec, workers=1))
    parallel = run_campaign(CampaignConfig(wl, spec, workers=2))
    assert serial == parallel
    assert report_csv(serial) == report_csv(parallel)


def test_eb_campaign_small():
    wl = EbWorkload(rows=2000, dims=(32, 64), pooling=50, batch=4, trials=10)
    hi = run_eb_campaign(CampaignConfig(wl, FaultSpec(Target.EB_TABLE, bitRange="high4", seed=1)))
    assert hi.trials == 20 and hi.detected >= 18
    exact = EbWorkload(rows=2000, dims=(32,), pooling=50, batch=4, trials=20, exact=True)
    ctl = run_eb_campaign(CampaignConfig(exact, FaultSpec(Target.NONE, seed=1)))
    assert ctl.falsePositives == 0


def test_eb_weighted_campaign_runs():
    wl = EbWorkload(rows=1000, dims=(16,), pooling=20, batch=2, trials=5, weighted=True)
    rep = run_campaign(CampaignConfig(wl, FaultSpec(Target.EB_TABLE, bitRange="high4", seed=2)))
    assert rep.trials == 5


def _report(detected, trials, target="weight_B"):
    return CampaignReport(target, "single_bit_flip", "all", (GroupStats("s", trials, detected),))


def test_summarize_examples():
    full = summarize(_report(2800, 2800))[-1]
    assert full.rate == 1.0 and full.ci_high == pytest.approx(1.0, abs=1e-12)
    part = summarize(_report(2663, 2800))[-1]
    assert round(part.rate, 4) == 0.9511
    assert part.ci_low < part.rate < part.ci_high
    zero = summarize(_report(0, 400, "none"))[-1]
    assert zero.rate == 0.0 and zero.ci_low == 0.0


def test_wilson_interval_closed_form():
    z = 1.959963984540054
    for k, n in [(2663, 2800), (5, 40), (38, 400)]:
        p = k / n
        centre = (p + z * z / (2 * n)) / (1 + z * z / n)
        half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
        s = summarize(_report(k, n))[-1]
        assert s.ci_low == pytest.approx(centre - half, abs=1e-9)
        assert s.ci_high == pytest.approx(centre + half, abs=1e-9)


def test_report_invariants_and_csv():
    rep = CampaignReport("none", "single_bit_flip", "all", (GroupStats("a", 10, 1), GroupStats("b", 30, 0)))
    assert rep.detected + rep.notDetected == rep.trials == 40
    assert rep.detectionRate == 1 / 40 and rep.falsePositives == 1
    rows = list(csv.DictReader(io.StringIO(report_csv(rep))))
    assert list(rows[0]) == CSV_COLUMNS
    assert [r["shape_or_dims"] for r in rows] == ["a", "b", "all"]
    assert rows[-1]["false_positives"] == "1" and rows[-1]["not_detected"] == "39"
