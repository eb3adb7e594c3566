import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from snmap.cli import main, read_grid_csv, write_grid_csv
from snmap.fixtures import bm1, drifted_bm, mm2
from snmap.model import save_spec
from snmap.potential import BarrierScenario, potential_density
from snmap.scale import ScaleSet


@pytest.fixture
def models(tmp_path):
    paths = {
        "bm1": save_spec(bm1(), tmp_path / "bm1.json"),
        "bm1_q0": save_spec(bm1(0.0), tmp_path / "bm1_q0.json"),
        "mm2": save_spec(mm2(), tmp_path / "mm2.json"),
        "mm2_q0": save_spec(mm2((0.0, 0.0)), tmp_path / "mm2_q0.json"),
    }
    return paths


def test_compute_two_sided(models, tmp_path):
    out = tmp_path / "out"
    code = main(["compute", "--model", str(models["bm1"]), "--scenario", "[-1,1]", "--grid", "512",
                 "--out", str(out), "--quiet"])
    assert code == 0
    x, u, _ = read_grid_csv(out / "density.csv")
    assert x.size == 512 and u.shape == (512, 1, 1)
    np.testing.assert_array_equal(u, potential_density(ScaleSet(bm1()), BarrierScenario.parse("[-1,1]"), x))
    atoms = json.loads((out / "atoms.json").read_text())
    assert atoms["lower"] == [[0.0]] and atoms["upper"] == [[0.0]]
    mats = json.loads((out / "matrices.json").read_text())
    assert mats["G"] == [[-1.0]] or abs(mats["G"][0][0] + 1) < 1e-12
    assert set(mats) == {"F0", "G", "H", "R", "W"}
    mass = json.loads((out / "mass.json").read_text())
    assert abs(mass["observed_row_sums"][0] - 1.0) < 1e-8


def test_compute_admitted_and_excluded(models, tmp_path, capsys):
    assert main(["compute", "--model", str(models["mm2_q0"]), "--scenario", "(-inf,1]",
                 "--out", str(tmp_path), "--quiet"]) == 0
    assert main(["compute", "--model", str(models["bm1_q0"]), "--scenario", "free",
                 "--out", str(tmp_path), "--quiet"]) == 3
    assert "excluded: μ=0" in capsys.readouterr().err
    mats = json.loads((tmp_path / "matrices.json").read_text())
    assert mats["H"] is not None


def test_input_errors(models, tmp_path):
    bad = json.loads(Path(models["mm2"]).read_text())
    bad["Q0"][0][0] = -0.9  # row sum 0.1
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    assert main(["validate", "--model", str(tmp_path / "bad.json"), "--out", str(tmp_path), "--quiet"]) == 2
    assert main(["compute", "--model", str(tmp_path / "missing.json"), "--scenario", "free",
                 "--out", str(tmp_path)]) == 2
    assert main(["compute", "--model", str(models["bm1"]), "--scenario", "[-1,1",
                 "--out", str(tmp_path)]) == 2
    (tmp_path / "junk.json").write_text("{not json")
    assert main(["compute", "--model", str(tmp_path / "junk.json"), "--scenario", "free",
                 "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--model", str(models["mm2"]), "--scenario", "free", "--dt", "0.01",
                 "--paths", "10", "--out", str(tmp_path)]) == 2


def test_simulate_writes_standard_errors(models, tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--model", str(models["mm2"]), "--scenario", "[-1,1|", "--paths", "200",
                 "--grid", "10", "--seed", "3", "--out", str(out), "--quiet"]) == 0
    x, u, se = read_grid_csv(out / "histogram.csv")
    assert u.shape == (10, 2, 2) and se.shape == (10, 2, 2)
    assert np.all(se >= 0) and np.all(u >= 0)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["paths"] == [100, 100]


def test_validate(models, tmp_path):
    out = tmp_path / "val"
    assert main(["validate", "--model", str(models["bm1"]), "--out", str(out), "--quiet"]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert len(rep["checks"]) >= 12 and rep["passed"]
    for c in rep["checks"]:
        assert {"name", "error", "threshold", "passed"} <= set(c)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.normal(size=7)
    u = rng.normal(size=(7, 2, 2)) * 10.0 ** rng.integers(-300, 300, size=(7, 2, 2))
    se = np.abs(rng.normal(size=(7, 2, 2)))
    write_grid_csv(tmp_path / "g.csv", x, u, se)
    x2, u2, se2 = read_grid_csv(tmp_path / "g.csv")
    np.testing.assert_array_equal(x, x2)
    np.testing.assert_array_equal(u, u2)
    np.testing.assert_array_equal(se, se2)


def test_console_script(models, tmp_path):
    res = subprocess.run([sys.executable, "-m", "snmap.cli", "compute", "--model", str(models["bm1"]),
                          "--scenario", "free", "--grid", "16", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "density.csv").exists()
