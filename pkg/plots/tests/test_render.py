"""Smoke tests: regenerate the three figure kinds from freshly produced
solver outputs, consuming only the CLI's CSV contract."""

import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from subdiff_plots.coeff_overlay import main as coeff_main
from subdiff_plots.convergence import main as conv_main
from subdiff_plots.heatmap import main as heat_main


@pytest.fixture(scope="session")
def case_a_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    proc = subprocess.run(
        [sys.executable, "-m", "subdiff.cli", "reproduce", "--case", "a",
         "--scale", "desk", "--eps", "0", "1e-4", "--seed", "101",
         "--out", str(out)],
        capture_output=True, text=True, timeout=1200)
    assert proc.returncode == 0, proc.stderr
    return out / "a"


@pytest.fixture(scope="session")
def case_d_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs2d")
    proc = subprocess.run(
        [sys.executable, "-m", "subdiff.cli", "reproduce", "--case", "d",
         "--scale", "desk", "--eps", "0", "--out", str(out)],
        capture_output=True, text=True, timeout=1800)
    assert proc.returncode == 0, proc.stderr
    return out / "d"


def test_coeff_overlay_per_noise_level(case_a_run, tmp_path):
    inputs = [str(case_a_run / "0" / "101" / "fields.csv"),
              str(case_a_run / "0.0001" / "101" / "fields.csv")]
    out = tmp_path / "coeffs.png"
    rc = coeff_main(["--in", *inputs, "--out", str(out),
                     "--labels", "clean", "eps=1e-4"])
    assert rc == 0 and out.exists() and out.stat().st_size > 10_000


def test_convergence_curve(case_a_run, tmp_path):
    out = tmp_path / "convergence.png"
    rc = conv_main(["--in", str(case_a_run / "0" / "101" / "history.csv"),
                    "--out", str(out)])
    assert rc == 0 and out.exists() and out.stat().st_size > 10_000


def test_heatmap_from_2d_run(case_d_run, tmp_path):
    out = tmp_path / "heatmap.png"
    rc = heat_main(["--in", str(case_d_run / "0" / "101" / "fields2d.csv"),
                    "--out", str(out)])
    assert rc == 0 and out.exists() and out.stat().st_size > 10_000


def test_schema_error_is_clean(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    out = tmp_path / "fig.png"
    rc = conv_main(["--in", str(bad), "--out", str(out)])
    assert rc == 1
    assert not out.exists()          # no partial file


def test_empty_csv_is_clean(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("iter,residual\n")
    out = tmp_path / "fig.png"
    rc = conv_main(["--in", str(empty), "--out", str(out)])
    assert rc == 1
    assert not out.exists()


def test_missing_input_is_clean(tmp_path):
    rc = heat_main(["--in", str(tmp_path / "nope.csv"),
                    "--out", str(tmp_path / "f.png")])
    assert rc == 1
