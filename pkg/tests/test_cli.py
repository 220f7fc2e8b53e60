import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from becnet.cli import (
    EXIT_CONFIG,
    EXIT_NOT_CONVERGED,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_VERIFY_FAILED,
    main,
)
from becnet.io import read_csv, read_spec

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
PATTERNS = ROOT / "src" / "becnet" / "patterns"


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_minimal_oracle_run(tmp_path):
    cfg = write(tmp_path, "network:\n  N: 1\n  lambda: [0.5]\nengine: oracle\nbeta: 1.0\nt_max: 1.0\nsample_dt: 0.5\n")
    out = tmp_path / "o.csv"
    assert main(["oracle", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    prov, header, rows = read_csv(out)
    assert header == ["t", "mean_1", "var_1"]
    assert len(rows) == 3
    assert prov["command"] == "oracle" and len(prov["config_sha256"]) == 64
    assert float(rows[-1][1]) < 0  # positive field pushes the spin down


@pytest.mark.parametrize(
    "command, config",
    [
        ("oracle", "single_site_oracle.yaml"),
        ("simulate-kmc", "two_site_kmc.yaml"),
        ("sample-metropolis", "anneal.yaml"),
        ("anneal", "anneal.yaml"),
    ],
)
def test_shipped_configs_byte_identical(tmp_path, command, config):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main([command, "--config", str(CONFIGS / config), "--out", str(a)]) == EXIT_OK
    assert main([command, "--config", str(CONFIGS / config), "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_seed_override_changes_output(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["simulate-kmc", "--config", str(CONFIGS / "two_site_kmc.yaml"), "--out", str(a)])
    main(["simulate-kmc", "--config", str(CONFIGS / "two_site_kmc.yaml"), "--out", str(b), "--seed", "8"])
    assert a.read_bytes() != b.read_bytes()
    assert read_csv(b)[0]["seed"] == "8"


def test_kmc_verify_oracle_passes(tmp_path):
    out = tmp_path / "k.csv"
    code = main(["simulate-kmc", "--config", str(CONFIGS / "two_site_kmc.yaml"), "--out", str(out),
                 "--verify-oracle"])
    assert code == EXIT_OK
    assert "oracle_max_deviation" in read_csv(out)[0]


def test_metropolis_verify_oracle(tmp_path):
    cfg = write(tmp_path, "network: {N: 3, lambda: [0.3]}\nengine: metropolis\nbeta: 1.0\n"
                          "n_sweeps: 20000\nburn_in: 100\nseed: 2\n")
    assert main(["sample-metropolis", "--config", str(cfg), "--out", str(tmp_path / "m.csv"),
                 "--verify-oracle"]) == EXIT_OK
    assert float(read_csv(tmp_path / "m.csv")[0]["oracle_total_variation"]) < 0.05


def test_verify_failure_exit_code(tmp_path):
    # far too few sweeps to sample a two-state distribution
    cfg = write(tmp_path, "network: {N: 1, lambda: [0.0]}\nengine: metropolis\nbeta: 1.0\nn_sweeps: 1\n"
                          "initial: {mode: explicit, values: [0]}\n")
    assert main(["sample-metropolis", "--config", str(cfg), "--out", str(tmp_path / "m.csv"),
                 "--verify-oracle"]) == EXIT_VERIFY_FAILED


def test_sde_and_ode_runs(tmp_path):
    cfg = write(tmp_path, "network: {N: 20, lambda: [0.1]}\nbeta: 1.0\nt_max: 0.5\ndt: 0.001\nsample_dt: 0.05\n"
                          "n_traj: 50\ninitial: half-filled\n")
    assert main(["simulate-ode", "--config", str(cfg), "--out", str(tmp_path / "o.csv"), "--verify-oracle"]) == 0
    assert "oracle_max_deviation" in read_csv(tmp_path / "o.csv")[0]
    assert main(["simulate-sde", "--config", str(cfg), "--out", str(tmp_path / "s.csv")]) == 0
    prov, header, rows = read_csv(tmp_path / "s.csv")
    assert header == ["t", "mean_1", "var_1"] and len(rows) == 11
    assert float(prov["clip_fraction"]) == 0.0


def test_learn_writes_network(tmp_path):
    cfg = write(tmp_path, f"training:\n  patterns: {PATTERNS}\n  c: 1.0e-6\n  N: 100\nbeta: inf\n")
    out = tmp_path / "net.txt"
    assert main(["learn", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    spec = read_spec(out)
    assert spec.M == 130 and spec.N == 100
    assert np.array_equal(spec.J, spec.J.T)


def test_complete_pattern_recall(tmp_path):
    shutil.copy(CONFIGS / "recall.yaml", tmp_path / "recall.yaml")
    text = (tmp_path / "recall.yaml").read_text().replace("../src/becnet/patterns", str(PATTERNS))
    cfg = write(tmp_path, text, "recall.yaml")
    out = tmp_path / "r.csv"
    assert main(["complete-pattern", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    prov, header, rows = read_csv(out)
    assert prov["status"] == "converged" and prov["nearest_final"] == "invader_a"
    grid = Path(str(out) + ".grid.txt").read_text()
    assert grid == (PATTERNS / "invader_a.txt").read_text()


def test_not_converged_exit_code(tmp_path):
    cfg = write(tmp_path, f"training:\n  patterns: {PATTERNS}\n  c: 7.7e-8\n  N: 10000\nbeta: inf\n"
                          f"t_max: 1.0e-7\ninitial: {{mode: pattern-fragment, file: {PATTERNS / 'invader_a.txt'}}}\n")
    assert main(["complete-pattern", "--config", str(cfg), "--out", str(tmp_path / "r.csv")]) == EXIT_NOT_CONVERGED
    assert read_csv(tmp_path / "r.csv")[0]["status"] == "not-converged"


def test_numerical_abort_exit_code(tmp_path):
    cfg = write(tmp_path, "network: {N: 1000, lambda: [-1.0]}\nbeta: inf\nt_max: 1.0\ndt: 0.1\ninitial: half-filled\n")
    assert main(["simulate-ode", "--config", str(cfg), "--out", str(tmp_path / "o.csv")]) == EXIT_NUMERICAL


@pytest.mark.parametrize(
    "text",
    [
        "network: {N: 1, lambda: [0.5]}\nbogus: 1\n",
        "engine: oracle\n",
        "network: {N: 40, lambda: [0, 0, 0, 0]}\nengine: oracle\n",
    ],
)
def test_config_errors_exit_code(tmp_path, text):
    cfg = write(tmp_path, text)
    assert main(["oracle", "--config", str(cfg)]) == EXIT_CONFIG


def test_oracle_too_large_is_config_error(tmp_path):
    cfg = write(tmp_path, "network: {N: 40, lambda: [0, 0, 0, 0]}\nengine: kmc\nn_traj: 2\nt_max: 0.01\n")
    assert main(["simulate-kmc", "--config", str(cfg), "--verify-oracle"]) == EXIT_CONFIG


def test_unknown_key_message(tmp_path, caplog):
    cfg = write(tmp_path, "network: {N: 1, lambda: [0.5]}\nbogus: 1\n")
    assert main(["oracle", "--config", str(cfg)]) == EXIT_CONFIG
    assert "line 2" in caplog.text and "bogus" in caplog.text


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, "network: {N: 1, lambda: [0.5]}\nengine: oracle\nbeta: 1.0\nsample_dt: 0.5\n")
    res = subprocess.run([sys.executable, "-m", "becnet.cli", "oracle", "--config", str(cfg)],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert res.stdout.startswith("# command: oracle")


def test_sweep_small(tmp_path):
    cfg = write(tmp_path, f"training:\n  patterns: {PATTERNS}\n  c: 1.0e-6\n  N: 100\nbeta: inf\n"
                          f"initial: {{mode: pattern-fragment, file: {PATTERNS / 'invader_a.txt'}}}\n"
                          "sweep:\n  N_list: [100, 1000]\n  eps_list: [0.05]\n  steps_per_unit: 50\n")
    out = tmp_path / "sw.csv"
    assert main(["sweep-n", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    prov, header, rows = read_csv(out)
    assert header == ["N", "epsilon", "t_epsilon", "engine", "seed", "status"]
    assert float(prov["slope_eps_0.05"].split()[0]) == pytest.approx(-1.0, abs=0.1)
