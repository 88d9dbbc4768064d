import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from eigendrift import cli, eigen
from eigendrift import stream as sm

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run_json(args, tmp_path, capsys=None):
    out = tmp_path / "out.json"
    code = cli.run(args + ["--out", str(out)])
    assert code == 0
    return json.loads(out.read_text())


def test_eig_json(tmp_path):
    res = run_json(["eig", "--config", str(CONFIGS / "dirichlet_m_quad.cfg"), "--D", "1e-2"], tmp_path)
    assert set(res) == {"lambda", "residual", "form", "grid_n"}
    assert 3.9 < res["lambda"] < 4.0


def test_eig_both_reports_discrepancy(tmp_path):
    cfg = write(tmp_path, "p.cfg", "[problem]\nm = sin(2*x)\nV = x\nbc = neumann\nD = 0.5\n")
    res = run_json(["eig", "--config", cfg, "--form", "both", "--grid", "400"], tmp_path)
    assert res["discrepancy"] < 1e-4


def test_limit0_candidate_table(tmp_path):
    res = run_json(["limit0", "--config", str(CONFIGS / "robin.cfg")], tmp_path)
    assert res["limit"] == pytest.approx(2.0)
    assert res["candidates"] and all("total" in c for c in res["candidates"])


def test_limit0_infinite_written_as_string(tmp_path):
    cfg = write(tmp_path, "p.cfg", "[problem]\nm = x\n")
    res = run_json(["limit0", "--config", cfg], tmp_path)
    assert res["limit"] == "inf"


def test_limitinf_finite_value(tmp_path):
    res = run_json(["limitinf", "--config", str(CONFIGS / "robin_large_D.cfg")], tmp_path)
    assert res["verdict"] == "finite"
    assert res["limit"] == pytest.approx(-9 / 7)
    assert res["unweighted_value"] == pytest.approx(-2 * math.sqrt(3 / 7))


def test_classify_robin_point_and_map(tmp_path):
    res = run_json(["classify-robin", "--config", str(CONFIGS / "robin.cfg")], tmp_path)
    assert res["sign_algebraic"] == 1 and res["mu1"] > 0
    out = tmp_path / "map.csv"
    assert cli.run(["classify-robin", "--config", str(CONFIGS / "robin.cfg"), "--map", "5",
                    "--grid", "100", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 25
    assert list(rows[0]) == ["k0", "k1", "mu1", "sign_numeric", "sign_algebraic"]


def test_sweep_csv_schema_and_rate_fit(tmp_path):
    cfg = write(tmp_path, "p.cfg", "[problem]\nm = x\n\n[sweep]\nD = 3e-3, 1e-2, 3e-2, 1e-1\nworkers = 1\n")
    out = tmp_path / "s.csv"
    assert cli.run(["sweep", "--config", cfg, "--out", str(out)]) == 0
    text = out.read_text()
    assert text.splitlines()[0] == "D,grid_n,lambda,residual,form"
    rows = list(csv.DictReader(text.splitlines()))
    assert [float(r["D"]) for r in rows] == [3e-3, 1e-2, 3e-2, 1e-1]
    fit = run_json(["rate-fit", str(out), "--model", "powerlaw"], tmp_path)
    D = np.array([3e-3, 1e-2, 3e-2, 1e-1])
    exact = np.polyfit(np.log(D), np.log(1 / D + D * math.pi ** 2), 1)[0]
    assert fit["slope"] == pytest.approx(exact, abs=1e-3)


def test_stream_commands(tmp_path):
    cfg = str(CONFIGS / "stream_buffer.cfg")
    res = run_json(["stream-classify", "--config", cfg], tmp_path)
    assert res["verdict"] == "persistence" and res["lambda"] < 0
    res = run_json(["stream-limits", "--config", cfg], tmp_path)
    assert res["case"] == "b"
    assert res["H"]["limit"] == pytest.approx(-1.0)
    out = tmp_path / "traj.csv"
    assert cli.run(["stream-sim", "--config", cfg, "--D", "1e-2", "--grid", "60", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t,x,u"
    assert all(float(l.split(",")[2]) >= 0 for l in lines[1:])


def test_output_is_deterministic(tmp_path):
    cfg = write(tmp_path, "p.cfg", "[problem]\nm = (x-0.3)^2\nV = sin(x)\n\n[sweep]\nD = 0.01, 0.1\nworkers = 2\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.run(["sweep", "--config", cfg, "--out", str(a)]) == 0
    assert cli.run(["sweep", "--config", cfg, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    ja, jb = tmp_path / "a.json", tmp_path / "b.json"
    for p in (ja, jb):
        assert cli.run(["limit0", "--config", cfg, "--out", str(p)]) == 0
    assert ja.read_bytes() == jb.read_bytes()


@pytest.mark.parametrize("text", [
    "[problem]\nm = x\nwibble = 1\n",
    "[problem]\nm = x\n[stream]\nq = 1\nr = 1\n",
    "[extra]\nm = x\n",
    "[problem]\nV = 1\n",
    "[problem]\nm = x +\n",
    "[problem]\nm = x\nbc = sticky\n",
    "[problem]\nm = x\nbc = robin\n",
    "[problem]\nm = x\nD = -1\n",
])
def test_config_errors_exit_1(tmp_path, text):
    cfg = write(tmp_path, "bad.cfg", text)
    assert cli.run(["eig", "--config", cfg]) == 1


def test_usage_errors_exit_1(tmp_path):
    assert cli.run(["frobnicate"]) == 1
    assert cli.run(["eig"]) == 1
    assert cli.run(["eig", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert cli.run(["eig", "--config", str(CONFIGS / "robin.cfg"), "--D", "0"]) == 1
    assert cli.run(["stream-sim", "--config", str(CONFIGS / "robin.cfg")]) == 1
    assert cli.run(["limitinf", "--config", str(CONFIGS / "robin.cfg"), "--format", "csv"]) == 1


def test_numerical_failure_exit_2(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise eigen.EigenError("stagnated")
    monkeypatch.setattr(eigen, "solve", boom)
    assert cli.run(["eig", "--config", str(CONFIGS / "robin.cfg"), "--out", str(tmp_path / "x")]) == 2
    assert not (tmp_path / "x").exists()


def test_cross_check_failure_exit_3(tmp_path, monkeypatch):
    monkeypatch.setattr(sm, "_closed_form", lambda *a: 123.0)
    assert cli.run(["stream-limits", "--config", str(CONFIGS / "stream_buffer.cfg"),
                    "--out", str(tmp_path / "x")]) == 3
