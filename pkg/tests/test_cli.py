"""Command-line behaviour: golden outputs, determinism, exit codes, provenance.

Set MECHFRINGE_REGEN_GOLDEN=1 to rewrite the golden files after an
intentional output change.
"""
import json
import math
import os
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mechfringe import __version__
from mechfringe.cli import eval_number, main, parse_config
from mechfringe.core import ConfigurationError

GOLDEN = Path(__file__).parent / "golden"
CONFIGS = Path(__file__).parent.parent / "configs"
CASES = ["filter", "herald", "wigner", "sample", "synthfit"]


def run(verb, config, out, *extra):
    return main([verb, "--config", str(config), "--out", str(out), "--threads", "1", *extra])


def files_in(directory):
    return sorted(str(p.relative_to(directory)) for p in Path(directory).rglob("*") if p.is_file())


@pytest.mark.parametrize("case", CASES)
def test_golden_outputs(case, tmp_path):
    assert run(case, GOLDEN / case / "config.ini", tmp_path) == 0
    expected = GOLDEN / case / "expected"
    if os.environ.get("MECHFRINGE_REGEN_GOLDEN"):
        shutil.rmtree(expected, ignore_errors=True)
        shutil.copytree(tmp_path, expected)
    assert files_in(tmp_path) == files_in(expected)
    for name in files_in(expected):
        assert (tmp_path / name).read_bytes() == (expected / name).read_bytes(), name


@pytest.mark.parametrize("case", ["sample", "synthfit"])
def test_rerun_is_byte_identical(case, tmp_path):
    cfg = GOLDEN / case / "config.ini"
    assert run(case, cfg, tmp_path / "a") == 0
    assert run(case, cfg, tmp_path / "b") == 0
    for name in files_in(tmp_path / "a"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_multithread_sample_reproducible(tmp_path):
    cfg = GOLDEN / "sample" / "config.ini"
    for d in ("a", "b"):
        args = ["sample", "--config", str(cfg), "--out", str(tmp_path / d), "--threads", "3"]
        assert main(args) == 0
    for name in files_in(tmp_path / "a"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_flag_overrides_and_changes_output(tmp_path):
    cfg = GOLDEN / "sample" / "config.ini"
    assert run("sample", cfg, tmp_path / "a") == 0
    assert run("sample", cfg, tmp_path / "b", "--seed", "6") == 0
    a = (tmp_path / "a" / "points_1_1.csv").read_text()
    b = (tmp_path / "b" / "points_1_1.csv").read_text()
    assert a != b
    assert "seed = 6" in (tmp_path / "b" / "run.ini").read_text()


def test_provenance_everywhere(tmp_path):
    assert run("wigner", GOLDEN / "wigner" / "config.ini", tmp_path / "c") == 0
    assert run("wigner", GOLDEN / "wigner" / "config.ini", tmp_path / "b", "--format", "bin") == 0
    assert run("filter", GOLDEN / "filter" / "config.ini", tmp_path / "j", "--format", "json") == 0
    cfg = parse_config((GOLDEN / "wigner" / "config.ini").read_text(), "wigner")
    head = (tmp_path / "c" / "wigner.csv").read_text().splitlines()[:3]
    assert head == [f"# tool=mechfringe {__version__} command=wigner",
                    f"# config_sha256={cfg.digest()}", "# seed=None"]
    meta = json.loads((tmp_path / "b" / "wigner.bin.meta.json").read_text())
    assert meta["provenance"]["config_sha256"] == cfg.digest()
    for name in ("summary.json", "wigner.bin.meta.json"):
        assert "provenance" in json.loads((tmp_path / "b" / name).read_text())
    doc = json.loads((tmp_path / "j" / "filter.json").read_text())
    assert doc["provenance"]["command"] == "filter"
    assert doc["columns"][0] == "x"


def test_wigner_binary_layout(tmp_path):
    from mechfringe.wigner import WignerGrid
    assert run("wigner", GOLDEN / "wigner" / "config.ini", tmp_path, "--format", "bin") == 0
    data = (tmp_path / "wigner.bin").read_bytes()
    grid = WignerGrid.from_bytes(data)
    assert grid.values.shape == (128, 64)
    rows = np.loadtxt(GOLDEN / "wigner" / "expected" / "wigner.csv", delimiter=",",
                      comments="#", skiprows=4)
    np.testing.assert_array_equal(grid.values.ravel(), rows[:, 2])


def test_filter_example(tmp_path, capsys):
    assert main(["filter", "--config", str(CONFIGS / "filter_thermal.ini"), "--out",
                 str(tmp_path), "--summary"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["peaks"]["{1,1}"] == 2 * summary["peaks"]["{1,0}"]
    assert summary["fringe_period"]["{1,1}"] == pytest.approx(math.pi, rel=1e-3)
    data = np.loadtxt(tmp_path / "pdf.csv", delimiter=",", comments="#", skiprows=4)
    from mechfringe.core import ThermalState
    np.testing.assert_allclose(data[:, 1], ThermalState(4).pdf(data[:, 0]), rtol=1e-13)


def test_herald_example(tmp_path, capsys):
    assert main(["herald", "--config", str(CONFIGS / "herald_grid.ini"), "--out",
                 str(tmp_path), "--summary"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["max_abs_diff"] < 1e-8
    assert summary["rows"] == 54 * 6
    golden = (GOLDEN / "herald" / "expected" / "herald.csv").read_text().splitlines()
    rows = [ln.split(",") for ln in golden if not ln.startswith("#")][1:]
    zero_alpha = [r for r in rows if r[0] == "{0;0}" and float(r[4]) == 0.0]
    assert zero_alpha and all(float(r[5]) == 1.0 for r in zero_alpha)


def test_wigner_examples(tmp_path, capsys):
    assert main(["wigner", "--config", str(CONFIGS / "wigner_noon.ini"), "--out",
                 str(tmp_path / "a"), "--summary"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["min_numeric"] == pytest.approx(summary["min_closed"], abs=1e-4)
    assert summary["marginal_max_deviation"] < 1e-5
    cfg = tmp_path / "weak.ini"
    cfg.write_text("[coupling]\nmu = 0.025\nphi = pi\n[state]\nnbar = 0.34\n"
                   "[wigner]\nmeasurement = N=2\nnx = 128\nnp = 64\n")
    assert main(["wigner", "--config", str(cfg), "--out", str(tmp_path / "b"),
                 "--summary"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["min_numeric"] == pytest.approx(-0.07, abs=0.005)
    cfg.write_text("[coupling]\nmu = 1.5\nphi = 0\n[state]\nnbar = 0\n"
                   "[wigner]\nmeasurement = {0,1}\nnx = 256\nnp = 256\n")
    assert main(["wigner", "--config", str(cfg), "--out", str(tmp_path / "c"),
                 "--summary"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["min_numeric"] == pytest.approx(-1 / math.pi, abs=1e-4)


def test_sample_example(tmp_path, capsys):
    assert main(["sample", "--config", str(CONFIGS / "sample_fringes.ini"), "--out",
                 str(tmp_path), "--threads", "1", "--summary"]) == 0
    summary = json.loads(capsys.readouterr().out)
    for z in summary["rate_zscore"].values():
        assert abs(z) < 3
    hist = np.loadtxt(tmp_path / "hist_1_1.csv", delimiter=",", comments="#", skiprows=4)
    from mechfringe.montecarlo import count_maxima
    assert count_maxima(hist[:, 1]) == 3


def test_synthfit_roundtrip_example(tmp_path, capsys):
    assert main(["synthfit", "--config", str(CONFIGS / "synthfit_roundtrip.ini"), "--out",
                 str(tmp_path), "--threads", "1", "--summary"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["within_tolerance"] >= 95


def test_synthfit_zero_noise_and_traces(tmp_path, capsys):
    cfg = tmp_path / "z.ini"
    cfg.write_text("[run]\nseed = 1\n[trace]\nnoise = 0\nn = 2000\n"
                   "[synthfit]\ncount = 2\nX = 2\nP = -1\nwrite_traces = true\n")
    assert main(["synthfit", "--config", str(cfg), "--out", str(tmp_path / "o"),
                 "--format", "bin", "--summary"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["within_tolerance"] == 2
    from mechfringe.tracefit import Trace
    tr = Trace.from_bytes((tmp_path / "o" / "traces" / "trace_00001.bin").read_bytes())
    assert tr.n == 2000
    fits = np.genfromtxt(tmp_path / "o" / "fits.csv", delimiter=",", comments="#",
                         skip_header=4)
    assert np.all(fits[:, 7] < 1e-8)


def test_print_config_round_trip(tmp_path, capsys):
    for path in sorted(CONFIGS.glob("*.ini")):
        verb = path.stem.split("_")[0]
        assert main([verb, "--config", str(path), "--print-config"]) == 0
        first = capsys.readouterr().out
        again = tmp_path / "again.ini"
        again.write_text(first)
        assert main([verb, "--config", str(again), "--print-config"]) == 0
        assert capsys.readouterr().out == first
        assert first.startswith(f"# mechfringe {__version__} {verb}")


def test_run_ini_matches_canonical(tmp_path):
    assert run("filter", GOLDEN / "filter" / "config.ini", tmp_path) == 0
    cfg = parse_config((GOLDEN / "filter" / "config.ini").read_text(), "filter")
    assert (tmp_path / "run.ini").read_text() == cfg.canonical()


# --- errors and exit codes -------------------------------------------------------

def write(tmp_path, text, name="c.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_unknown_key_exit_2(tmp_path, capsys):
    cfg = write(tmp_path, "[coupling]\nmu = 1\nphi = 0\nmuu = 2\n[state]\nnbar = 0\n"
                          "[filter]\nevents = {1,0}\n")
    assert run("filter", cfg, tmp_path / "o") == 2
    assert "muu" in capsys.readouterr().err


def test_unknown_section_exit_2(tmp_path):
    cfg = write(tmp_path, "[herald]\nmu = 1\nnbar = 0\nphi = 0\nalpha = 0.5\nevents = {1,0}\n"
                          "[extra]\nx = 1\n")
    assert run("herald", cfg, tmp_path / "o") == 2


def test_missing_seed_exit_2(tmp_path, capsys):
    cfg = write(tmp_path, "[coupling]\nmu = 1\nphi = 0\n[drive]\nsigma = 1\n"
                          "[sample]\nevents = {1,0}\naccepted = 10\n")
    assert run("sample", cfg, tmp_path / "o") == 2
    assert "seed" in capsys.readouterr().err
    assert run("sample", cfg, tmp_path / "o", "--seed", "3") == 0


def test_seed_on_deterministic_command_rejected(tmp_path):
    assert run("filter", GOLDEN / "filter" / "config.ini", tmp_path, "--seed", "1") == 2


def test_bad_values_exit_2(tmp_path):
    base = "[coupling]\nmu = {mu}\nphi = 0\n[state]\nnbar = 0\n[filter]\nevents = {ev}\n"
    assert run("filter", write(tmp_path, base.format(mu="-1", ev="{1,0}")), tmp_path / "o") == 2
    assert run("filter", write(tmp_path, base.format(mu="1", ev="{1}")), tmp_path / "o") == 2
    assert run("filter", write(tmp_path, base.format(mu="__import__('os')", ev="{1,0}")),
               tmp_path / "o") == 2
    assert run("filter", write(tmp_path, "not an ini file"), tmp_path / "o") == 2
    assert run("filter", GOLDEN / "filter" / "config.ini", tmp_path / "o", "--format",
               "bin") == 2
    assert main(["filter", "--config", str(GOLDEN / "filter" / "config.ini"), "--threads",
                 "0"]) == 2


def test_output_collision_exit_4(tmp_path):
    cfg = GOLDEN / "filter" / "config.ini"
    assert run("filter", cfg, tmp_path) == 0
    before = (tmp_path / "filter.csv").read_bytes()
    assert run("filter", cfg, tmp_path) == 4
    assert (tmp_path / "filter.csv").read_bytes() == before
    assert run("filter", cfg, tmp_path, "--overwrite") == 0


def test_missing_config_exit_4(tmp_path):
    assert run("filter", tmp_path / "nope.ini", tmp_path / "o") == 4


def test_numerical_error_exit_3(tmp_path, capsys):
    cfg = write(tmp_path, "[coupling]\nmu = 3\nphi = 0\n[state]\nnbar = 4\n"
                          "[wigner]\nmeasurement = N=6\nnx = 32\nnp = 32\n")
    assert run("wigner", cfg, tmp_path / "o") == 3
    assert "numerical error" in capsys.readouterr().err
    cfg = write(tmp_path, "[coupling]\nmu = 0\nphi = 0\n[state]\nnbar = 0\n"
                          "[wigner]\nmeasurement = {0,1}\nnx = 32\nnp = 32\n")
    assert run("wigner", cfg, tmp_path / "p") == 3


def test_eval_number():
    assert eval_number("pi/2") == pytest.approx(math.pi / 2)
    assert eval_number("-2*sqrt(2)**2") == pytest.approx(-4.0)
    assert eval_number("1e-3") == 1e-3
    for bad in ("inf", "nan", "x", "1/0", "abs(1)", "[1]"):
        with pytest.raises(ConfigurationError):
            eval_number(bad)


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "mechfringe.cli", "--version"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == f"mechfringe {__version__}"
