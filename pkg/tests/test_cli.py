import csv
import io
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from lpabft.cli import main
from lpabft.config import ConfigError, builtin_shapes, load_config, parse_config, read_shapes
from lpabft.embedding import QuantEmbeddingTable, save_table
from lpabft.faultlab import CSV_COLUMNS, EbWorkload, GemmWorkload

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

GEMM_CFG = """
seed = 5
[fault]
target = "intermediate_C"
[gemm]
trials = 10
shapes = [[1, 16, 32], [4, 8, 8]]
"""


def test_shipped_shape_sets():
    bench = builtin_shapes("bench")
    desk = builtin_shapes("desk")
    assert len(bench) == 28 and len(desk) == 28
    assert (1, 800, 3200) in bench and (1, 800, 3200) in desk
    assert {m for m, _, _ in bench} == {1, 8, 32, 64}


def test_read_shapes(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("# m n k\n1 2 3\n4,5,6\n")
    assert read_shapes(p) == [(1, 2, 3), (4, 5, 6)]
    p.write_text("1 2\n")
    with pytest.raises(ConfigError):
        read_shapes(p)
    p.write_text("1 0 3\n")
    with pytest.raises(ConfigError):
        read_shapes(p)


def test_shipped_configs_parse():
    for path in sorted(CONFIGS.glob("*.toml")):
        cfg = load_config(path)
        wl = cfg.workload
        if isinstance(wl, GemmWorkload):
            assert len(wl.shapes) * wl.trials == 2800
        else:
            assert isinstance(wl, EbWorkload) and wl.pooling == 100 and wl.batch == 10


def test_parse_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="exactly one"):
        parse_config({"fault": {"target": "none"}})
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config({"gemm": {"trials": 1, "shapes": [[1, 1, 1]], "bogus": 1}})
    with pytest.raises(ConfigError):
        parse_config({"fault": {"target": "eb_table"}, "gemm": {"shapes": [[1, 1, 1]]}})
    with pytest.raises(ConfigError):
        parse_config({"gemm": {"shapes": [[1, 1]]}})
    with pytest.raises(ConfigError):
        parse_config({"fault": {"model": "cosmic_ray"}, "gemm": {"shapes": [[1, 1, 1]]}})


def test_seed_from_environment(monkeypatch):
    monkeypatch.setenv("LPABFT_SEED", "777")
    cfg = parse_config({"gemm": {"shapes": [[1, 1, 1]]}})
    assert cfg.fault.seed == 777


def test_cmd_campaign_writes_csv(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text(GEMM_CFG)
    assert main(["campaign", str(cfg)]) == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "c.csv").read_text())))
    assert list(rows[0]) == CSV_COLUMNS
    assert rows[-1]["shape_or_dims"] == "all" and rows[-1]["detected"] == "20"
    assert "intermediate_C" in capsys.readouterr().out
    out = tmp_path / "elsewhere.csv"
    assert main(["campaign", str(cfg), "--out", str(out), "--workers", "2"]) == 0
    assert out.read_text() == (tmp_path / "c.csv").read_text()


def test_cmd_campaign_errors(tmp_path, capsys):
    assert main(["campaign", str(tmp_path / "missing.toml")]) != 0
    assert "config not found" in capsys.readouterr().err
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = [unterminated\n")
    assert main(["campaign", str(bad)]) != 0
    assert "parse error" in capsys.readouterr().err
    bad.write_text("[gemm]\ntrials = 0\nshapes = [[1, 1, 1]]\n")
    assert main(["campaign", str(bad)]) != 0
    assert "invalid config" in capsys.readouterr().err


def test_cmd_analyze(capsys):
    assert main(["analyze", "--m", "1", "--n", "800", "--k", "3200", "--d", "64", "--pool", "100"]) == 0
    out = capsys.readouterr().out
    assert "encode B: 0.501406" in out
    assert "encode A: 1.000781" in out
    assert "error in B      single_bit_flip  98.83%" in out
    assert "error in C_temp single_bit_flip  100.00%" in out
    assert ">= 98.83%" in out
    assert "compute overhead: 0.018958" in out


def test_cmd_analyze_rejects_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["analyze", "--m", "0", "--n", "8", "--k", "8"])
    assert exc.value.code != 0


def test_cmd_bench_small(tmp_path, capsys):
    shapes = tmp_path / "shapes.txt"
    shapes.write_text("1 32 64\n2 16 16\n")
    out = tmp_path / "bench.csv"
    rc = main(["bench", "--shapes", str(shapes), "--reps", "5", "--out", str(out),
               "--eb-rows", "2000", "--eb-dims", "16", "--eb-pool", "10", "--eb-batch", "2"])
    assert rc == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert [r["kind"] for r in rows] == ["gemm", "gemm", "eb", "eb"]
    assert all(float(r["baseline_ns"]) > 0 and r["repetitions"] == "5" for r in rows)


def test_cmd_bench_rejects_few_reps(capsys):
    assert main(["bench", "--reps", "1", "--no-eb"]) != 0
    assert "--reps" in capsys.readouterr().err


def test_cmd_eb_check(tmp_path, capsys):
    rng = np.random.default_rng(0)
    t = QuantEmbeddingTable.build(rng.integers(-128, 128, (100, 8)).astype(np.int8),
                                  rng.uniform(0.005, 0.02, 100), rng.uniform(-1, 1, 100))
    table = tmp_path / "t.abeb"
    save_table(t, table)
    bags = tmp_path / "bags.txt"
    bags.write_text("1 2 3\n4:0.5 5:1.5\n")
    assert main(["eb-check", str(table), str(bags)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "bag,pooling,rsum,csum,err" and len(lines) == 3
    assert all(line.endswith(",0") for line in lines[1:])

    t.rows[2, 3] = np.int8(int(t.rows[2, 3]) ^ -128)  # corrupt after row sums were computed
    save_table(t, table)
    assert main(["eb-check", str(table), str(bags)]) == 2
    assert "row sum" in capsys.readouterr().err
    assert main(["eb-check", str(table), str(bags), "--no-validate"]) == 1
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[1].endswith(",1") and lines[2].endswith(",0")


def test_backend_env_forces_fallback():
    code = "import lpabft; print(lpabft.BACKEND)"
    env = {**os.environ, "LPABFT_BACKEND": "python"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
