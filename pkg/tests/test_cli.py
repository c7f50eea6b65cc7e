import csv
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wgqed import cli
from wgqed.cli import ConfigError, ExperimentConfig, main, parse_grid


def write(tmp_path, text, name="c.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def read_rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("text,expected", [
    ("1, 2.5, 10", [1.0, 2.5, 10.0]),
    ("linspace(0, 1, 3)", [0.0, 0.5, 1.0]),
    ("logspace(1, 3, 3)", [10.0, 100.0, 1000.0]),
])
def test_grid_grammar(text, expected):
    np.testing.assert_allclose(parse_grid(text), expected)


@pytest.mark.parametrize("text", ["", " , ", "logspace(1, 2, 0)", "range(1, 2)"])
def test_grid_rejects(text):
    with pytest.raises((ConfigError, ValueError)):
        parse_grid(text)


@given(sub=st.sampled_from(cli.SUBCOMMANDS), seed=st.integers(0, 2**64 - 1), workers=st.integers(1, 64))
def test_config_round_trip(sub, seed, workers):
    cfg = ExperimentConfig(sub, general={"seed": seed, "workers": workers})
    again = ExperimentConfig.from_ini(cfg.to_ini(), sub)
    assert again.values == cfg.values
    assert again.general == cfg.general


def test_config_round_trip_with_values():
    cfg = ExperimentConfig("run", {"protocol": "P3", "forced_p": 0.5, "exact": True, "m": 4})
    assert ExperimentConfig.from_ini(cfg.to_ini(), "run").values == cfg.values


@pytest.mark.parametrize("text", ["[run]\nbogus = 1\n", "[nope]\nx = 1\n", "[run]\nm = three\n",
                                  "[general]\nworkers = 0\n", "not an ini"])
def test_bad_config_exit_code(tmp_path, text):
    assert main(["run", "--config", str(write(tmp_path, text)), "--out", str(tmp_path / "o.csv")]) == 2
    assert not (tmp_path / "o.csv").exists()


def test_unknown_key_is_named(tmp_path, capsys):
    main(["sweep", "--config", str(write(tmp_path, "[sweep]\npurcel = 10\n"))])
    assert "purcel" in capsys.readouterr().err


def test_dynamics_output(tmp_path):
    out = tmp_path / "d.csv"
    cfg = write(tmp_path, "[dynamics]\nstep = P1_stepC\npoints = 11\n")
    assert main(["dynamics", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_rows(out)
    assert rows[0][0] == "t" and len(rows[0]) == 5
    assert rows[0][-1] == "goal_analytic"
    assert len(rows) == 12
    assert [float(x) for x in rows[1][1:4]] == [1.0, 0.0, 0.0]


def test_dynamics_protocol3_has_dark_column(tmp_path):
    out = tmp_path / "d.csv"
    cfg = write(tmp_path, "[dynamics]\nstep = P3_stepB\npoints = 5\n")
    assert main(["dynamics", "--config", str(cfg), "--out", str(out)]) == 0
    assert read_rows(out)[0][-3:] == ["goal_analytic", "dark_analytic", "dark"]


def test_dynamics_empty_grid(tmp_path):
    out = tmp_path / "d.csv"
    cfg = write(tmp_path, "[dynamics]\npoints = 0\n")
    assert main(["dynamics", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()


def test_outputs_are_byte_identical(tmp_path):
    cfg = write(tmp_path, "[run]\nm = 2\nseeds = 50\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["run", "--config", str(cfg), "--out", str(a), "--seed", "9"]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(b), "--seed", "9", "--workers", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.summary.csv").read_bytes() == (tmp_path / "b.summary.csv").read_bytes()


def test_run_forced_success(tmp_path):
    cfg = write(tmp_path, "[run]\nm = 3\nseeds = 5\nforced_p = 1\n")
    out = tmp_path / "r.csv"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert all(row[1] == "3" for row in read_rows(out)[1:])


def test_plan_outputs(tmp_path):
    out = tmp_path / "p.csv"
    assert main(["plan", "--out", str(out)]) == 0
    rows = read_rows(out)
    zero = [r for r in rows[1:] if r[0] == "ZERO_HERALD"]
    assert [float(r[1]) for r in zero] == [1, 2, 4, 8, 16]
    beta = read_rows(tmp_path / "p.beta.csv")
    assert [r[0] for r in beta[1:]] == ["continuum", "total_photon", "discrete"]


def test_plan_rejects_non_power_of_two(tmp_path):
    cfg = write(tmp_path, "[plan]\nm = 3\n")
    assert main(["plan", "--config", str(cfg), "--out", str(tmp_path / "p.csv")]) == 2


def test_sweep_protocol3_star(tmp_path):
    cfg = write(tmp_path, "[sweep]\nprotocol = 3\nquantity = p_star\npurcell = 100, 1000\n")
    out = tmp_path / "s.csv"
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_rows(out)
    assert rows[0][:5] == ["n_m", "purcell", "exact", "exact_refined", "analytic"]
    assert len(rows) == 3


def test_sweep_rejects_unknown_quantity(tmp_path):
    cfg = write(tmp_path, "[sweep]\nprotocol = 2\nquantity = p_star\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "s.csv")]) == 2


def test_metrology_output(tmp_path):
    cfg = write(tmp_path, "[metrology]\nkinds = NOON, YURKE\nn = 4, 8\n")
    out = tmp_path / "m.csv"
    assert main(["metrology", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_rows(out)
    noon = [r for r in rows[1:] if r[0] == "NOON"]
    assert [float(r[3]) for r in noon] == [16.0, 64.0]


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def boom(cfg):
        raise RuntimeError("did not converge")

    monkeypatch.setattr(cli, "cmd_dynamics", boom)
    assert main(["dynamics", "--out", str(tmp_path / "d.csv")]) == 3


def test_missing_output_directory(tmp_path):
    assert main(["plan", "--out", str(tmp_path / "nope" / "p.csv")]) == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "wgqed", "plan", "--out", str(tmp_path / "p.csv")],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert (tmp_path / "p.csv").exists()
