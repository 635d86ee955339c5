import csv
import subprocess
import sys

import numpy as np
import pytest

from vsdr import __version__
from vsdr.cli import main
from vsdr.params import ModelParameters, load_parameters
from vsdr.reduction import StepBattery, StepResponse, reference_models, step_schedule


def manifest(d):
    return dict(line.split(": ", 1) for line in (d / "manifest.txt").read_text().splitlines())


def read_csv(path):
    with open(path) as f:
        return list(csv.reader(f))


def test_print_defaults_round_trip(capsys):
    assert main(["--print-defaults"]) == 0
    text = capsys.readouterr().out
    assert load_parameters(text) == ModelParameters()


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0 and __version__ in capsys.readouterr().out


def test_no_command_is_input_error():
    assert main([]) == 2


def test_simulate_full(tmp_path):
    assert main(["simulate", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "trajectory.csv")
    assert len(rows[0]) == 34 and len(rows) == 1 + 1501
    m = manifest(tmp_path)
    for k in ("command", "config", "scenario", "output", "seed", "version", "argv", "created"):
        assert k in m
    assert m["command"] == "simulate" and m["unstable"] == "false"


def test_simulate_reduced_schema(tmp_path):
    sc = tmp_path / "s.scn"
    sc.write_text("duration = 0.2\nrelative = true\nt, input, value\n0.0, p_l, -0.1\n")
    assert main(["simulate", "--model", "P2Z1", "--scenario", str(sc), "--out", str(tmp_path)]) == 0
    header = read_csv(tmp_path / "trajectory.csv")[0]
    assert header[:10] == ["t", "v_1", "v_2", "theta_hat", "theta_g", "v_pll_q", "p_m", "dw_g",
                           "mu_pll", "mu_pt"]


def test_simulate_flags_unstable_reduction(tmp_path):
    assert main(["simulate", "--model", "P2Z0", "--out", str(tmp_path)]) == 0
    assert manifest(tmp_path)["unstable"] == "true"


def test_equilibrium_command(tmp_path):
    assert main(["equilibrium", "--out", str(tmp_path)]) == 0
    rows = {(r[0], r[1]): float(r[2]) for r in read_csv(tmp_path / "equilibrium.csv")[1:]}
    assert rows[("state", "w_m")] == pytest.approx(0.41211285078933135, abs=1e-9)
    assert float(manifest(tmp_path)["residual"]) < 1e-10


def test_eigs_and_linearize(tmp_path):
    assert main(["eigs", "--out", str(tmp_path)]) == 0
    assert len(read_csv(tmp_path / "eigenvalues.csv")) == 22
    assert float(manifest(tmp_path)["max_real"]) < 0
    assert main(["linearize", "--model", "P3Z1", "--out", str(tmp_path)]) == 0
    assert manifest(tmp_path)["states"] == "10"


def test_sweep_and_stabmap(tmp_path):
    assert main(["sweep", "--param", "k_pp:3:6:3", "--model", "P2Z1", "--out", str(tmp_path)]) == 0
    assert len(read_csv(tmp_path / "sweep.csv")) == 4
    assert main(["stabmap", "--p1", "k_pp:2:10:2", "--p2", "T_ip:0.05:0.3:2", "--model", "P2Z0",
                 "--out", str(tmp_path)]) == 0
    m = manifest(tmp_path)
    assert int(m["stable"]) + int(m["unstable"]) == 4


def test_fit_from_battery_file(tmp_path):
    tf = reference_models()["P2Z1"]
    t = np.arange(1001) * 1e-3
    b = StepBattery([StepResponse(a, c, t, (c - a) * tf.step_response(t), 0.3)
                     for a, c in step_schedule()])
    path = tmp_path / "battery.csv"
    b.to_csv(path)
    assert main(["fit", "--battery", str(path), "--structure", "P2Z1", "--restarts", "2",
                 "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "fit.csv")
    assert rows[1][0] == "P2Z1" and float(rows[1][-1]) > 99


def test_battery_command(tmp_path):
    assert main(["battery", "--duration", "0.05", "--out", str(tmp_path)]) == 0
    assert manifest(tmp_path)["segments"] == "10"


@pytest.mark.parametrize("config, code", [
    (None, 2),
    ("[thermal]\nr_th = -5\n", 2),
    ("[nowhere]\nx = 1\n", 2),
    ("[thermal]\nT_f_ref = -60\n", 4),
])
def test_exit_codes(tmp_path, config, code):
    cfg = tmp_path / "c.ini"
    if config is not None:
        cfg.write_text(config)
    assert main(["equilibrium", "--config", str(cfg), "--defaults", "--out", str(tmp_path)]) == code


def test_numerical_failure_exit(tmp_path):
    sc = tmp_path / "sag.scn"
    sc.write_text("duration = 0.5\nt, input, value\n0.0, v_g, 0.1\n")
    assert main(["simulate", "--scenario", str(sc), "--out", str(tmp_path)]) == 3


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("VSDR_OUT", str(tmp_path / "env"))
    assert main(["equilibrium"]) == 0
    assert (tmp_path / "env" / "equilibrium.csv").is_file()


def test_deterministic_output(tmp_path):
    for d in ("a", "b"):
        assert main(["eigs", "--model", "P2Z1", "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "eigenvalues.csv").read_text() == (tmp_path / "b" / "eigenvalues.csv").read_text()


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "vsdr.cli", "equilibrium", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0 and (tmp_path / "manifest.txt").is_file()
