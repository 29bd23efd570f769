import csv
import json
import subprocess
import sys

import pytest

from randopen.cli import main
from randopen.experiment import BOUND_COLUMNS, CLT_COLUMNS, FCB_COLUMNS, ExperimentConfig

SMALL = ["--N", "16,64", "--M", "4000", "--seed", "7"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_config(tmp_path, **values):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(values))
    return str(p)


def test_clt_outputs_and_manifest(tmp_path):
    out = tmp_path / "o"
    assert main(["clt", "--out", str(out), *SMALL]) == 0
    rows = read_csv(out / "clt.csv")
    assert list(rows[0]) == CLT_COLUMNS
    assert [int(r["N"]) for r in rows] == [16, 64]
    # sigma_N^2 = 2N/9 for the default observable
    for r in rows:
        assert float(r["sigma"]) ** 2 == pytest.approx(2 * int(r["N"]) / 9, rel=1e-12)
    path = read_csv(out / "clt_path.csv")
    assert len(path) == 6
    man = json.loads((out / "manifest_clt.json").read_text())
    cfg = ExperimentConfig.resolve(None, {"out": str(out), "N": [16, 64], "M": 4000, "seed": 7})
    assert man["config_hash"] == cfg.hash
    assert man["seeds"]["seed"] == 7


def test_clt_bytes_independent_of_threads(tmp_path):
    outs = []
    for t in (1, 3):
        out = tmp_path / f"t{t}"
        assert main(["clt", "--out", str(out), "--threads", str(t), *SMALL]) == 0
        outs.append(((out / "clt.csv").read_bytes(), (out / "clt_path.csv").read_bytes()))
    assert outs[0] == outs[1]


def test_timings_flag_adds_column(tmp_path):
    out = tmp_path / "o"
    assert main(["clt", "--out", str(out), "--timings", "--N", "16", "--M", "500"]) == 0
    assert list(read_csv(out / "clt.csv")[0]) == CLT_COLUMNS + ["runtime_ms"]


def test_unsorted_N_rejected_without_outputs(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["clt", "--out", str(out), "--N", "64,16"]) == 2
    assert not out.exists() or not any(out.iterdir())
    assert "strictly increasing" in capsys.readouterr().err


def test_unknown_config_key_rejected(tmp_path):
    cfg = write_config(tmp_path, colour="blue")
    assert main(["bounds", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_missing_config_file_rejected(tmp_path):
    assert main(["bounds", "--config", str(tmp_path / "nope.json")]) == 2


def test_compare_needs_clt_output(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["compare", "--out", str(out)]) == 4
    assert "clt.csv" in capsys.readouterr().err


def test_compare_after_clt(tmp_path):
    out = tmp_path / "o"
    assert main(["clt", "--out", str(out), *SMALL]) == 0
    assert main(["compare", "--out", str(out), *SMALL]) == 0
    rows = read_csv(out / "compare.csv")
    assert [int(r["N"]) for r in rows] == [16, 64]
    slopes = {r["column"]: float(r["loglog_slope"]) for r in read_csv(out / "compare_slopes.csv")}
    assert set(slopes) == {"d_K", "d_W", "kolmogorov_bound", "wasserstein_bound"}
    assert slopes["wasserstein_bound"] == pytest.approx(-0.5, abs=0.05)


def test_bounds_csv(tmp_path):
    out = tmp_path / "o"
    assert main(["bounds", "--out", str(out)]) == 0
    rows = read_csv(out / "bounds.csv")
    assert list(rows[0]) == BOUND_COLUMNS
    assert len(rows) == 11


def test_fcb_csv(tmp_path):
    out = tmp_path / "o"
    assert main(["fcb", "--out", str(out), "--observable", "identity", "--fcb-N", "8", "--gaps", "1,2,3,4"]) == 0
    rows = read_csv(out / "fcb.csv")
    assert list(rows[0]) == FCB_COLUMNS
    assert float(rows[0]["fit_r"]) == pytest.approx(0.25, abs=0.03)


def test_verify_conditions_json(tmp_path):
    cfg = write_config(tmp_path, conditions={"n_fibres": 20})
    out = tmp_path / "o"
    assert main(["verify-conditions", "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads((out / "conditions.json").read_text())
    assert rep["all_checkable_pass"]
    assert all(c["status"] in ("pass", "assumed") for c in rep["clauses"])


def test_spectral_json(tmp_path):
    cfg = write_config(tmp_path, conditions={"n_fibres": 10})
    out = tmp_path / "o"
    assert main(["spectral", "--config", cfg, "--out", str(out), "--grid-k", "4096", "--n-max", "6"]) == 0
    rep = json.loads((out / "spectral.json").read_text())
    assert rep["lambda"] == pytest.approx([0.75] * 6, abs=1e-12)
    assert rep["kappa"] == pytest.approx(1 / 3, abs=0.05)


def test_simulate_csv(tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--out", str(out), "--N", "3,5", "--M", "50"]) == 0
    rows = read_csv(out / "simulate.csv")
    assert [float(r["conditional_mass"]) for r in rows] == [0.75**3, 0.75**5]
    assert len(read_csv(out / "samples_N5.csv")) == 50


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "randopen.cli", "bounds", "--out", str(tmp_path / "o")],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
