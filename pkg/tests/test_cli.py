import json
from pathlib import Path

import numpy as np
import pytest

from subdiff.cli import main


def test_forward_zero_source(tmp_path):
    cfg = {"nx": 64, "nt": 64, "alpha": 0.5,
           "b": {"kind": "constant", "value": 0.0},
           "q": {"kind": "constant", "value": 0.0},
           "f": {"kind": "constant", "value": 0.0},
           "sigma": {"kind": "constant", "value": 0.0}}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "run"
    assert main(["forward", "--config", str(cfg_path), "--out", str(out)]) == 0
    flux = np.loadtxt(out / "flux.csv", delimiter=",", skiprows=1, ndmin=2)
    assert np.all(flux[:, 1] == 0.0)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["completed"] is True


def test_forward_case_truth_flux(tmp_path):
    cfg = {"nx": 128, "nt": 128, "alpha": 0.5, "delta": 0.05,
           "b": {"kind": "case_truth"}, "q": {"kind": "case_truth"},
           "f": {"kind": "case_truth"}, "sigma": {"kind": "case_truth"}}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "run"
    assert main(["forward", "--config", str(cfg_path), "--out", str(out)]) == 0
    flux = np.loadtxt(out / "flux.csv", delimiter=",", skiprows=1, ndmin=2)
    assert np.max(np.abs(flux[:, 1])) > 0.1
    snaps = np.loadtxt(out / "snapshots.csv", delimiter=",", skiprows=1)
    assert snaps.shape == (128, 10)


def test_forward_missing_field_exit_2(tmp_path):
    cfg = {"nx": 64, "nt": 64, "alpha": 0.5,
           "b": {"kind": "constant", "value": 0.0}}
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    rc = main(["forward", "--config", str(cfg_path), "--out",
               str(tmp_path / "x")])
    assert rc == 2


def test_forward_bad_json_exit_2(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text("{not json")
    rc = main(["forward", "--config", str(cfg_path), "--out",
               str(tmp_path / "x")])
    assert rc == 2
    assert "config" in capsys.readouterr().err.lower()


def test_reproduce_unknown_case_exit_2(tmp_path):
    assert main(["reproduce", "--case", "z", "--out", str(tmp_path)]) == 2


def test_diag_eigen_passes(tmp_path):
    out = tmp_path / "diag"
    assert main(["diag", "--kind", "eigen", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["pass"] is True
    drift = np.loadtxt(out / "weyl_drift.csv", delimiter=",", skiprows=1)
    assert drift.shape[1] == 5


def test_diag_mlf_passes(tmp_path):
    out = tmp_path / "diag"
    assert main(["diag", "--kind", "mlf", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["checks"]["regime_continuity"]["pass"] is True


def test_diag_gauge_passes(tmp_path):
    out = tmp_path / "diag"
    assert main(["diag", "--kind", "gauge", "--out", str(out)]) == 0


@pytest.mark.slow
def test_reproduce_case_a_clean(tmp_path):
    rc = main(["reproduce", "--case", "a", "--scale", "desk",
               "--eps", "0", "--out", str(tmp_path / "results")])
    assert rc == 0
    run_dir = tmp_path / "results" / "a" / "0" / "101"
    summary = json.loads((run_dir / "summary.json").read_text())
    assert "e_b" in summary["errors"] and "e_f" in summary["errors"]
    hist = np.loadtxt(run_dir / "history.csv", delimiter=",", skiprows=1)
    assert hist.shape[0] == summary["iterations"] + 1
    fields = np.loadtxt(run_dir / "fields.csv", delimiter=",", skiprows=1)
    assert fields.shape[1] == 7


def test_invert_roundtrip(tmp_path):
    from subdiff.cases import CASES, materialize
    from subdiff.observe import save_record

    rec, _ = materialize(CASES["a"], "desk", 0.0)
    save_record(rec, tmp_path / "data")
    cfg = {"case": "a", "scale": "desk", "max_iters": 4}
    cfg_path = tmp_path / "inv.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "run"
    rc = main(["invert", "--config", str(cfg_path), "--data",
               str(tmp_path / "data.csv"), "--out", str(out)])
    assert rc == 0
    state = json.loads((out / "state.json").read_text())
    assert state["iterations"] <= 4 and state["residual"] < 1.0
    params = np.loadtxt(out / "params.csv", delimiter=",")
    assert params.size > 100
