import json

import numpy as np
import pytest

from esnmpc import io
from esnmpc.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main

SMALL = {
    "reservoir": {"n": 60, "density": 0.05},
    "excitation": {"duration": 8000.0},
    "training": {"margin": 50.0, "lam_grid_points": 6},
    "mpc": {"horizon": 8},
    "scenario": {"ref_times": [200.0, 800.0], "ref_values": [7.5, 6.8],
                 "dist_times": [1400.0], "dist_values": [0.45], "duration": 2000.0},
}


def write_config(path, **overrides):
    cfg = json.loads(json.dumps(SMALL))
    for section, values in overrides.items():
        cfg.setdefault(section, {}).update(values)
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "small.json")
    out = str(root / "run")
    for cmd in ("excite", "identify", "reduce", "control", "bench"):
        assert main([cmd, "--config", cfg, "--seed", "1", "--out", out]) == EXIT_OK, cmd
    return root, cfg, out


def test_pipeline_writes_all_artifacts(run_dir):
    root, cfg, out = run_dir
    names = {p.name for p in (root / "run").iterdir()}
    assert {"train.csv", "valid.csv", "train.json", "valid.json", "model_1.json",
            "model_2a.json", "model_2b.json", "model_2full.json", "table.txt",
            "control_2full.csv", "bench_full.csv", "bench_reduced.csv",
            "bench.txt"} <= names
    table = (root / "run" / "table.txt").read_text().splitlines()
    assert table[0].startswith("Algorithm")
    assert all(line.endswith("# seed=1") for line in table[1:])


def test_artifacts_embed_config(run_dir):
    root, _, _ = run_dir
    model = json.loads((root / "run" / "model_2full.json").read_text())
    assert model["config"]["reservoir"]["n"] == 60
    assert model["config"]["seed"] == 1
    header = io.read_header(root / "run" / "control_2full.csv")
    assert header["config"]["scenario"]["duration"] == 2000.0
    side = json.loads((root / "run" / "train.json").read_text())
    assert side["config"]["excitation"]["duration"] == 8000.0


def test_control_log_respects_bounds(run_dir):
    root, _, _ = run_dir
    log = io.read_log(root / "run" / "control_2full.csv")
    assert log["u"].size == 200
    assert np.all((log["u"] >= 12.7 - 1e-9) & (log["u"] <= 16.7 + 1e-9))


def test_validate(run_dir, capsys):
    root, cfg, out = run_dir
    assert main(["validate", "--config", cfg, "--out", out,
                 "--model", str(root / "run" / "model_2full.json")]) == EXIT_OK
    assert "fitting=" in capsys.readouterr().out


def test_excite_is_reproducible(run_dir, tmp_path):
    root, cfg, _ = run_dir
    assert main(["excite", "--config", cfg, "--seed", "1", "--out", str(tmp_path)]) == EXIT_OK
    for name in ("train.csv", "valid.csv"):
        assert (tmp_path / name).read_bytes() == (root / "run" / name).read_bytes()
    assert main(["excite", "--config", cfg, "--seed", "2", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "train.csv").read_bytes() != (root / "run" / "train.csv").read_bytes()


def test_bad_usage_exits_1(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["identify", "--variant", "3"])
    assert exc.value.code == EXIT_USAGE


def test_missing_inputs_exit_1(tmp_path):
    out = str(tmp_path)
    assert main(["identify", "--out", out]) == EXIT_USAGE
    assert main(["control", "--out", out]) == EXIT_USAGE
    assert main(["validate", "--out", out, "--model", str(tmp_path / "nope.json")]) == EXIT_USAGE
    assert main(["excite", "--config", str(tmp_path / "nope.json"), "--out", out]) == EXIT_USAGE


def test_invalid_config_exits_1(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"reservoir": {"size": 3}}')
    assert main(["excite", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_USAGE
    bad.write_text("{not json")
    assert main(["excite", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_USAGE


def test_zero_duration_is_rejected(tmp_path):
    cfg = write_config(tmp_path / "c.json", excitation={"duration": 0.0})
    assert main(["excite", "--config", cfg, "--out", str(tmp_path)]) != EXIT_OK


def test_numerical_failure_exits_2(run_dir, tmp_path):
    root, _, _ = run_dir
    for name in ("train.csv", "valid.csv"):
        (tmp_path / name).write_bytes((root / "run" / name).read_bytes())
    # a LASSO weight this large zeroes every readout weight, leaving nothing
    # to reduce
    cfg = write_config(tmp_path / "c.json", training={"lam": 1e12})
    assert main(["identify", "--config", cfg, "--out", str(tmp_path)]) == EXIT_NUMERIC
