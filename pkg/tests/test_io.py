import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from becnet.io import (
    ConfigError,
    format_csv,
    format_spec,
    parse_config,
    parse_config_text,
    parse_spec,
    read_csv,
    read_spec,
    write_csv,
    write_spec,
)
from becnet.model import INFINITE, NetworkSpec

from conftest import random_spec


def test_spec_round_trip_dense(tmp_path, rng):
    spec = random_spec(rng, 20, 7, scale=0.3)
    write_spec(spec, tmp_path / "net.txt")
    back = read_spec(tmp_path / "net.txt")
    assert np.array_equal(back.J, spec.J)
    assert np.array_equal(back.lam, spec.lam)
    assert back.N == 7


@given(seed=st.integers(0, 10**6))
def test_spec_round_trip_coo(seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, 5, 3)
    J = spec.J.copy()
    J[0, 2] = J[2, 0] = 0.0
    spec = NetworkSpec(J, spec.lam, spec.N)
    back = parse_spec(format_spec(spec, coo=True))
    assert np.array_equal(back.J, spec.J)
    assert np.array_equal(back.lam, spec.lam)


def test_coo_expands_symmetrically():
    spec = parse_spec("M 3\nN 2\nlambda 0 0 0\nJ coo\n0 2 0.5\n# comment\n\n1 0 -1\n")
    assert spec.J.tolist() == [[0, -1, 0.5], [-1, 0, 0], [0.5, 0, 0]]


def test_asymmetric_dense_rejected_with_indices():
    with pytest.raises(ConfigError, match=r"J\[0\]\[1\]"):
        parse_spec("M 2\nN 1\nlambda 0 0\nJ dense\n0 1\n2 0\n")


def test_conflicting_coo_entries_rejected():
    with pytest.raises(ConfigError, match="line 6"):
        parse_spec("M 2\nN 1\nlambda 0 0\nJ coo\n0 1 0.5\n1 0 0.25\n")


@pytest.mark.parametrize(
    "text, line",
    [
        ("M 2\nN x\nlambda 0 0\nJ coo\n", 2),
        ("M 2\nN 1\nlambda 0\n", 3),
        ("M 2\nN 1\nlambda 0 0\nJ dense\n0 1\n1 0 3\n", 6),
        ("M 2\nN 1\nlambda 0 0\nJ coo\n0 5 1\n", 5),
    ],
)
def test_spec_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError, match=f"line {line}"):
        parse_spec(text)


def test_spec_diagonal_kept_but_inert():
    spec = parse_spec("M 2\nN 1\nlambda 0 0\nJ dense\n1 0\n0 0\n")
    assert spec.J[0, 0] == 1.0
    assert np.all(spec.coupling == 0)


def test_minimal_config_defaults(tmp_path):
    cfg = parse_config_text("network:\n  N: 1\n  lambda: [0.5]\nengine: oracle\n", base=tmp_path)
    assert cfg.network.M == 1 and cfg.network.N == 1
    assert cfg.beta == INFINITE and cfg.alpha == 1.0 and cfg.seed == 0
    assert cfg.initial.mode == "uniform-random"


def test_config_accepts_inf_beta_and_overrides():
    cfg = parse_config_text("network: {N: 2, lambda: [0]}\nbeta: inf\nseed: 4\n", overrides={"seed": 9})
    assert cfg.beta == INFINITE and cfg.seed == 9


def test_unknown_key_reported_with_line():
    text = "network:\n  N: 1\n  lambda: [0.5]\nengine: oracle\nbetta: 1.0\n"
    with pytest.raises(ConfigError, match="line 5.*betta"):
        parse_config_text(text)


def test_nested_unknown_key_reported_with_line():
    text = "network:\n  N: 1\n  lamda: [0.5]\n"
    with pytest.raises(ConfigError, match="line 3.*network.lamda"):
        parse_config_text(text)


@pytest.mark.parametrize(
    "text, match",
    [
        ("engine: warp\n", "engine"),
        ("beta: -1\n", "beta"),
        ("t_max: 0\n", "t_max"),
        ("n_traj: 1.5\n", "n_traj"),
        ("initial: {mode: pattern-fragment}\n", "initial.file"),
        ("schedule: {times: [0, 1]}\n", "schedule"),
        ("network: {N: 1, lambda: [0, 0], J: [[0, 1], [2, 0]]}\n", "network"),
        ("network: {N: 1, lambda: [0, 0], J_coo: [[0, 1, 1], [1, 0, 2]]}\n", "conflicting"),
        ("sweep: {N_list: [10]}\n", "sweep.N_list"),
        ("[1, 2]\n", "mapping"),
        ("a: [\n", "invalid YAML"),
    ],
)
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config_text(text)


def test_config_paths_relative_to_file(tmp_path, rng):
    write_spec(random_spec(rng, 3, 2), tmp_path / "net.txt")
    (tmp_path / "run.yaml").write_text("network: net.txt\nengine: kmc\n")
    cfg = parse_config(tmp_path / "run.yaml")
    assert cfg.network.M == 3


def test_config_digest_tracks_referenced_files(tmp_path, rng):
    write_spec(random_spec(rng, 3, 2), tmp_path / "net.txt")
    (tmp_path / "run.yaml").write_text("network: net.txt\n")
    d1 = parse_config(tmp_path / "run.yaml").digest
    assert parse_config(tmp_path / "run.yaml").digest == d1
    write_spec(random_spec(rng, 3, 2), tmp_path / "net.txt")
    assert parse_config(tmp_path / "run.yaml").digest != d1


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "nope.yaml")


def test_csv_round_trip(tmp_path):
    rows = [[0.0, 0.1, 1], [0.5, -1 / 3, 2]]
    write_csv(tmp_path / "a.csv", ["t", "x", "n"], rows, {"seed": 3, "engine": "kmc"})
    prov, header, back = read_csv(tmp_path / "a.csv")
    assert prov == {"seed": "3", "engine": "kmc"}
    assert header == ["t", "x", "n"]
    assert float(back[1][1]) == -1 / 3
    assert back[1][2] == "2"


def test_csv_text_is_stable():
    a = format_csv(["t"], [[0.1], [np.float64(0.2)]], {"k": "v"})
    assert a == "# k: v\nt\n0.1\n0.2\n"
