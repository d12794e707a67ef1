import json

import numpy as np
import pytest

from soliton_lab import io
from soliton_lab.cli import main, resolve_config

SMALL = ["--grid.n", "400", "--T", "0.02", "--dt", "1e-3"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def load(path):
    with open(path) as fh:
        return json.load(fh)


def test_soliton_default(tmp_path, capsys):
    code, out, _ = run(capsys, "soliton", "--out", str(tmp_path), "--json")
    assert code == 0
    assert json.loads(out)["ok"] is True
    rep = load(tmp_path / "asymptotics.json")
    assert rep["asymptotics"]["slopes"]["psi"] == pytest.approx(0.5, abs=0.01)
    for name in ("trajectory.csv", "profile.csv"):
        lines = (tmp_path / name).read_text().splitlines()
        assert lines[0].startswith("# soliton_lab") and lines[1].startswith("# config_hash")
    assert "config_hash" in rep["_meta"] and "numpy" in rep["_meta"]["versions"]


def test_soliton_invalid_n(tmp_path, capsys):
    code, _, err = run(capsys, "soliton", "--n", "1", "--out", str(tmp_path))
    assert code == 1
    assert json.loads(err)["error"] == "config"


def test_check_explicit(tmp_path, capsys):
    code, _, _ = run(capsys, "soliton", "--check-explicit", "--out", str(tmp_path))
    assert code == 0
    assert max(load(tmp_path / "asymptotics.json")["explicit_residual"]) < 1e-9


def test_check_explicit_needs_n4(tmp_path, capsys):
    code, _, err = run(capsys, "soliton", "--n", "2", "--check-explicit", "--out", str(tmp_path))
    assert code == 1 and "n = 4" in json.loads(err)["message"]


def test_evolve(tmp_path, capsys):
    code, _, _ = run(capsys, "evolve", "--grid.n", "400", "--out", str(tmp_path))
    assert code == 0
    cols = io.read_csv(tmp_path / "flow.csv")
    assert {"t", "x", "rho", "s", "chi", "psi_t"} <= set(cols)


def test_perturb_zero(tmp_path, capsys):
    code, _, _ = run(capsys, "perturb", *SMALL, "--init.shape", "zero", "--out", str(tmp_path))
    assert code == 0
    sol = io.read_csv(tmp_path / "solution.csv")
    assert np.all(sol["eta"] == 0) and np.all(sol["xi"] == 0)


def test_perturb_small_data(tmp_path, capsys):
    code, _, _ = run(capsys, "perturb", *SMALL, "--out", str(tmp_path))
    assert code == 0
    assert load(tmp_path / "picard.json")["converged"] is True
    energy = load(tmp_path / "energy.json")
    assert {"linf_h1_eta", "l2_h1p1_eta", "linf_h1_xi", "l2_h2p1_xi", "e0", "per_slice"} <= set(energy)
    assert (tmp_path / "residual.json").exists()


def test_perturb_selftest_rejects_large_dt(tmp_path, capsys):
    code, _, err = run(capsys, "perturb", "--grid.n", "400", "--T", "0.05", "--dt", "0.01",
                       "--out", str(tmp_path))
    assert code == 2
    assert json.loads(err)["error"] == "StepRejectedError"


def test_resolution_sweep_order(tmp_path, capsys):
    code, _, _ = run(capsys, "sweep", "--sweep.values", "500,1000,2000", "--jobs", "1",
                     "--out", str(tmp_path))
    assert code == 0
    cells = load(tmp_path / "sweep.json")["cells"]
    orders = [c["order"] for c in cells[1:]]
    assert all(abs(o - 2) <= 0.3 for o in orders)
    assert all((tmp_path / f"cell_{i:03d}" / "cell.json").exists() for i in range(3))


def test_eigen_sweep(tmp_path, capsys):
    code, _, _ = run(capsys, "sweep", "--sweep.task", "eigen", "--sweep.param", "n",
                     "--sweep.values", "2,4,9", "--jobs", "2", "--out", str(tmp_path))
    assert code == 0
    tab = io.read_csv(tmp_path / "sweep.csv")
    for n, e0 in zip(tab["n"], tab["eig0"]):
        assert e0 == pytest.approx(1 - 1 / np.sqrt(n), abs=1e-6)
    assert np.allclose(tab["eig1"], 1.0) and np.allclose(tab["eig2"], 2.0)


def test_empty_sweep(tmp_path, capsys):
    code, _, _ = run(capsys, "sweep", "--sweep.values", "", "--out", str(tmp_path))
    assert code == 1


def test_sweep_cell_failure_exit_2(tmp_path, capsys):
    code, _, _ = run(capsys, "sweep", "--sweep.task", "perturb", "--sweep.param", "init.amplitude",
                     "--sweep.values", "1e-3", "--picard.max_iter", "1", *SMALL, "--jobs", "1",
                     "--out", str(tmp_path))
    assert code == 2


def test_verify(tmp_path, capsys):
    code, _, _ = run(capsys, "verify", "--out", str(tmp_path))
    assert code == 0
    assert all(c["pass"] for c in load(tmp_path / "verify.json")["checks"])


def test_artifacts_bit_identical(tmp_path, capsys):
    for sub in ("a", "b"):
        assert run(capsys, "soliton", "--out", str(tmp_path / sub))[0] == 0
    for name in ("trajectory.csv", "profile.csv", "asymptotics.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_file_and_override(tmp_path):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# comment\nn = 9\nsigma = 5  # inline\n")
    cfg = resolve_config({"sigma": "7"}, str(cfg_file))
    assert cfg["n"] == 9 and cfg["sigma"] == 7.0


def test_unknown_config_key(tmp_path, capsys):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("bogus = 1\n")
    code, _, err = run(capsys, "soliton", "--config", str(cfg_file), "--out", str(tmp_path))
    assert code == 1 and "bogus" in json.loads(err)["message"]


@pytest.mark.parametrize("args", [["--case", "HC", "--lambda", "1"], ["--dt", "0.003"],
                                  ["--alpha", "0"], ["--init.shape", "square"]])
def test_validation_before_compute(tmp_path, capsys, args):
    assert run(capsys, "perturb", *args, "--out", str(tmp_path))[0] == 1
    assert not any(tmp_path.iterdir())


def test_io_roundtrip(tmp_path):
    cols = {"a": np.array([1.0, 2.5]), "b": np.array([np.pi, -1e-300])}
    io.write_csv(tmp_path / "x.csv", cols, {"k": 1})
    back = io.read_csv(tmp_path / "x.csv")
    assert all(np.array_equal(back[k], cols[k]) for k in cols)
    io.write_json(tmp_path / "x.json", {"v": np.float64(np.nan), "w": np.arange(2)}, {"k": 1})
    doc = load(tmp_path / "x.json")
    assert doc["v"] is None and doc["w"] == [0, 1]
    assert doc["_meta"]["config_hash"] == io.config_hash({"k": 1})
