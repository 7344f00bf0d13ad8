import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from palevim.cli import export_plot_data, main, rho_grid, strip_timing
from palevim.models import ScenarioSpec, generate_scenario, make_builtin
from palevim.pale import analyze_predictor

DATA = Path(__file__).parent / "data"


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def compute_json(argv, capsys):
    code, out, err = run(["compute"] + argv, capsys)
    assert code == 0, err
    return json.loads(out)


class TestCompute:
    def test_linear_gauss_report(self, capsys):
        r = compute_json(["--scenario", "gauss3:rho=0.9", "--model", "builtin:linear:1,1,0.5", "--n", "20000",
                          "--K", "500", "--vims", "ale_main,qpale,cpale"], capsys)
        for p, beta in zip(r["predictors"], (1, 1, 0.5)):
            for method in ("ale_main", "qpale", "cpale"):
                assert p["vims"][method]["sqrt"] == pytest.approx(beta, rel=0.03)

    def test_mp_without_response(self, capsys):
        code, out, err = run(["compute", "--scenario", "gauss3", "--model", "builtin:linear:1,1,0.5",
                              "--vims", "mp"], capsys)
        assert code == 2 and "--response" in err and out == ""

    def test_deterministic(self, capsys):
        argv = ["--scenario", "copula4", "--n", "400", "--model", "builtin:example5", "--seed", "3",
                "--vims", "ale_main,qpale,cpale,shm,mp", "--sigma", "0.2", "--N", "3", "--M", "5"]
        a, b = compute_json(argv, capsys), compute_json(argv, capsys)
        assert json.dumps(strip_timing(a)) == json.dumps(strip_timing(b))

    def test_schema_roundtrip_and_sqrt(self, capsys):
        r = compute_json(["--scenario", "iid_uniform:d=3", "--n", "300", "--model", "builtin:linear:1,2,3",
                          "--vims", "ale_main,ale_second,qpale,cpale", "--r2"], capsys)
        assert json.loads(json.dumps(r)) == r
        assert list(r) == ["meta", "predictors", "r2_ale2"]
        for p in r["predictors"]:
            assert list(p["vims"]) == ["ale_main", "ale_second", "qpale", "cpale"]
            for v in p["vims"].values():
                assert abs(v["sqrt"] ** 2 - v["value"]) <= 1e-12 * max(1, v["value"])
            assert p["evaluations"] == 2 * 300
        assert r["meta"]["evaluations"]["local_effects"] == 3 * 2 * 300

    def test_threads_do_not_change_results(self, capsys, monkeypatch):
        argv = ["--scenario", "copula4", "--n", "500", "--model", "builtin:example5",
                "--vims", "ale_main,qpale,cpale,ale_second,shm", "--M", "4"]
        one = compute_json(argv, capsys)
        monkeypatch.setenv("PALEVIM_THREADS", "4")
        four = compute_json(argv, capsys)
        assert strip_timing(one) == strip_timing(four)

    def test_bad_thread_env(self, capsys, monkeypatch):
        monkeypatch.setenv("PALEVIM_THREADS", "zero")
        code, _, err = run(["compute", "--scenario", "segment2", "--model", "builtin:example2"], capsys)
        assert code == 2 and "PALEVIM_THREADS" in err

    def test_model_protocol_error(self, capsys):
        code, _, err = run(["compute", "--scenario", "segment2", "--n", "20", "--model", "cmd:exit 1"], capsys)
        assert code == 3 and "exit 1" in err

    def test_argument_errors(self, capsys):
        cases = [
            ["compute", "--model", "builtin:example1"],
            ["compute", "--scenario", "nope", "--model", "builtin:example1"],
            ["compute", "--scenario", "segment2", "--model", "builtin:nope"],
            ["compute", "--scenario", "segment2", "--model", "builtin:example1", "--vims", "bogus"],
            ["compute", "--scenario", "segment2", "--model", "builtin:example5"],
            ["compute", "--scenario", "segment2", "--model", "builtin:example1", "--K", "0"],
            ["compute", "--data", "/no/such/file.csv", "--model", "builtin:example1"],
            ["frobnicate"],
            [],
        ]
        for argv in cases:
            code, _, _ = run(argv, capsys)
            assert code == 2, argv

    def test_subprocess_categorical(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        path = tmp_path / "d.csv"
        with path.open("w") as fh:
            fh.write("x,g\n")
            for _ in range(60):
                fh.write(f"{rng.random()!r},{rng.choice(['lo', 'mid', 'hi'])}\n")
        script = tmp_path / "model.py"
        script.write_text(
            "import sys\nnext(sys.stdin)\nshift = {'lo': 0.0, 'mid': 1.0, 'hi': 3.0}\n"
            "for line in sys.stdin:\n    x, g = line.strip().split(',')\n    print(float(x) + shift[g])\n")
        r = compute_json(["--data", str(path), "--model", f"cmd:{sys.executable} {script}",
                          "--vims", "ale_main,qpale,cpale,ale_second"], capsys)
        g = r["predictors"][1]
        assert g["kind"] == "categorical" and g["K"] == 2
        assert g["vims"]["ale_main"]["value"] > 0
        assert g["vims"]["qpale"]["value"] == pytest.approx(g["vims"]["ale_main"]["value"], rel=1e-10)
        assert g["vims"]["ale_second"]["value"] is None and g["vims"]["ale_second"]["reason"]

    def test_out_and_plots(self, tmp_path, capsys):
        out = tmp_path / "r.json"
        plots = tmp_path / "plots"
        code, stdout, _ = run(["compute", "--scenario", "iid_uniform", "--n", "200", "--model",
                               "builtin:example3_interaction", "--vims", "ale_main,ale_second",
                               "--out", str(out), "--plots", str(plots)], capsys)
        assert code == 0 and stdout == ""
        assert json.loads(out.read_text())["meta"]["n"] == 200
        names = sorted(p.name for p in plots.iterdir())
        assert names == ["ale_main_x1.csv", "ale_main_x2.csv", "ale_second_x1_x2.csv",
                         "pale_paths_x1.csv", "pale_paths_x2.csv"]


def path_rows(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return rows


class TestPlotData:
    def test_identical_paths_for_additive(self, tmp_path):
        d = generate_scenario(ScenarioSpec("iid_uniform", 150, seed=1, d=2))
        a = analyze_predictor(make_builtin("example1"), d, 0, K=5)
        export_plot_data({"analyses": [a], "surfaces": {}, "names": d.names}, tmp_path)
        by_k = {}
        for row in path_rows(tmp_path / "pale_paths_x1.csv"):
            by_k.setdefault(row["k"], set()).add(round(float(row["value"]), 12))
        assert len(by_k) == 6 and all(len(v) == 1 for v in by_k.values())

    def test_distinct_ordered_paths_for_interaction(self, tmp_path):
        d = generate_scenario(ScenarioSpec("iid_uniform", 150, seed=1, d=2))
        a = analyze_predictor(make_builtin("example3_interaction"), d, 0, K=5)
        export_plot_data({"analyses": [a], "surfaces": {}, "names": d.names}, tmp_path)
        paths = {}
        for row in path_rows(tmp_path / "pale_paths_x1.csv"):
            paths.setdefault(int(row["path_id"]), []).append(float(row["value"]))
        curves = np.array([paths[l] for l in sorted(paths)])
        assert len(curves) == a.L
        assert len({tuple(np.round(c, 12)) for c in curves}) == a.L
        # paths are ordered by x2: increments at the last interval increase with path id
        assert np.all(np.diff(curves[:, -1] - curves[:, -2]) > 0)

    def test_empty_results(self, tmp_path):
        target = tmp_path / "none"
        assert export_plot_data({}, target) == []
        assert not target.exists()

    def test_main_curve_file(self, tmp_path):
        d = generate_scenario(ScenarioSpec("iid_uniform", 100, seed=2, d=2))
        a = analyze_predictor(make_builtin("example2"), d, 1, K=4)
        export_plot_data({"analyses": [a], "names": d.names}, tmp_path)
        rows = path_rows(tmp_path / "ale_main_x2.csv")
        assert len(rows) == 5
        np.testing.assert_allclose([float(r["f_hat"]) for r in rows], a.curve.f_hat)


class TestSimulate:
    def test_copula(self, tmp_path, capsys):
        out = tmp_path / "c.csv"
        assert main(["simulate", "--scenario", "copula4", "--n", "100", "--seed", "1", "--out", str(out)]) == 0
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["x1", "x2", "x3", "x4"] and len(rows) == 101
        vals = np.array(rows[1:], dtype=float)
        assert np.all((vals >= 0) & (vals <= 1))

    def test_sigma_and_repeatability(self, capsys):
        code, a, _ = run(["simulate", "--scenario", "gauss3:rho=0.5", "--n", "10", "--seed", "4", "--sigma", "0.5"],
                         capsys)
        _, b, _ = run(["simulate", "--scenario", "gauss3:rho=0.5", "--n", "10", "--seed", "4", "--sigma", "0.5"],
                      capsys)
        assert code == 0 and a == b
        assert a.splitlines()[0] == "x1,x2,x3,y"

    def test_unknown_scenario(self, capsys):
        code, _, err = run(["simulate", "--scenario", "moon", "--n", "10"], capsys)
        assert code == 2 and "unknown scenario" in err


class TestOracle:
    def oracle(self, argv, capsys):
        code, out, err = run(["oracle"] + argv, capsys)
        assert code == 0, err
        return list(csv.DictReader(io.StringIO(out)))

    def test_independent_case(self, capsys):
        (row,) = self.oracle(["--beta", "1,1,0.5", "--rho", "0"], capsys)
        for j, b in enumerate((1, 1, 0.5), start=1):
            for name in ("GS_T", "GS_M", "SHC", "SHM", "ALE"):
                assert float(row[f"{name}_{j}"]) == pytest.approx(b * b)
            assert float(row[f"MP_{j}"]) == float(row[f"CP_{j}"]) == pytest.approx(2 * b * b)

    def test_absent_correlated(self, capsys):
        (row,) = self.oracle(["--beta", "1,0,0.5", "--rho", "0.9"], capsys)
        assert float(row["SHC_2"]) == pytest.approx(0.2025)

    def test_grid(self, capsys):
        rows = self.oracle(["--beta", "1,1,0.5", "--rho-grid", "-0.95:0.95:0.05"], capsys)
        assert len(rows) == 39
        assert float(rows[0]["rho"]) == -0.95 and float(rows[-1]["rho"]) == 0.95
        assert len(rho_grid("0:0.5:0.1")) == 6

    def test_json_format(self, capsys):
        code, out, _ = run(["oracle", "--beta", "1,1,0.5", "--rho", "0.9", "--format", "json"], capsys)
        payload = json.loads(out)
        assert payload[0]["GS_T"][0] == pytest.approx(0.19)

    def test_rho_out_of_range(self, capsys):
        code, _, err = run(["oracle", "--beta", "1,1,0.5", "--rho", "1"], capsys)
        assert code == 2 and "rho" in err
        code, _, _ = run(["oracle", "--beta", "1,1,0.5", "--rho-grid", "-1:1:0.5"], capsys)
        assert code == 2


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "palevim.cli", "oracle", "--beta", "1,1,0.5", "--rho", "0.5"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("rho,GS_T_1")
    proc = subprocess.run([sys.executable, "-m", "palevim.cli", "compute", "--scenario", "gauss3",
                           "--model", "builtin:linear:1,1,1", "--vims", "mp"], capture_output=True, text=True)
    assert proc.returncode == 2
