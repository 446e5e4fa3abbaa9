import csv
import json
import math
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from adagrad_bias import cli
from adagrad_bias.analysis import example32_oracle, figure2_data
from adagrad_bias.maxmargin import MarginProblem, solve_weighted_margin

CONFIGS = resources.files("adagrad_bias").joinpath("configs")
BUNDLED = ["example31_theta60", "example31_theta45", "figure1", "figure2", "planted_logistic"]


def cfg(name) -> str:
    return str(CONFIGS.joinpath(f"{name}.json"))


def small_config(tmp_path, **changes):
    raw = json.loads(Path(cfg("figure2")).read_text())
    raw["hyperparams"]["max_iters"] = 2000
    raw["thinning"] = 100
    raw.update(changes)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    @pytest.mark.parametrize("name", BUNDLED)
    def test_bundled_configs_validate(self, name):
        exp = cli.load_config(cfg(name))
        assert exp.runs and exp.thinning >= 1

    def test_empty_runs_rejected(self, tmp_path):
        with pytest.raises(cli.ConfigError, match="runs"):
            cli.load_config(small_config(tmp_path, runs=[]))

    def test_unknown_check_rejected(self, tmp_path):
        with pytest.raises(cli.ConfigError):
            cli.load_config(small_config(tmp_path, checks=["nope"]))

    def test_generator_requires_seed(self):
        raw = json.loads(Path(cfg("planted_logistic")).read_text())
        del raw["dataset"]["generator"]["seed"]
        with pytest.raises(cli.ConfigError):
            cli.parse_config(raw)

    def test_scientific_notation_and_overrides(self, tmp_path):
        path = tmp_path / "c.json"
        text = Path(cfg("figure2")).read_text().replace('"epsilon": 1e-08', '"epsilon": 1.0E-8')
        path.write_text(text)
        exp = cli.load_config(path, out=tmp_path / "o", max_iters=7)
        assert exp.hp.epsilon == 1e-8 and exp.hp.max_iters == 7 and exp.out == tmp_path / "o"

    def test_bad_labels_and_w0(self, tmp_path):
        with pytest.raises(cli.ConfigError):
            cli.load_config(small_config(tmp_path, dataset={"points": [[1.0, 0.0]], "labels": [0]}))
        raw = json.loads(Path(small_config(tmp_path)).read_text())
        raw["hyperparams"]["w0"] = [1.0, 2.0, 3.0]
        with pytest.raises(cli.ConfigError):
            cli.parse_config(raw)


class TestRunCommand:
    def test_outputs_and_exit_status(self, tmp_path):
        out = tmp_path / "out"
        assert cli.main(["run", small_config(tmp_path), "--out", str(out)]) == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == ["checks.json", "direction_report.json", "trajectory_adagrad.csv", "trajectory_gd.csv"]
        checks = json.loads((out / "checks.json").read_text())
        assert {c["name"] for c in checks} >= {"adagrad:descent", "gd:descent", "corner_condition"}
        report = json.loads((out / "direction_report.json").read_text())
        corner = example32_oracle(1, 1, 5 * math.pi / 8, -math.pi / 8)
        np.testing.assert_allclose(report["adagrad_dir_predicted"], np.array(corner) / np.linalg.norm(corner), atol=1e-12)

    def test_byte_reproducible(self, tmp_path):
        c = small_config(tmp_path)
        cli.main(["run", c, "--out", str(tmp_path / "a")])
        cli.main(["run", c, "--out", str(tmp_path / "b")])
        for f in (tmp_path / "a").iterdir():
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_failing_check_gives_nonzero_exit(self, tmp_path):
        raw = json.loads(Path(cfg("figure1")).read_text())
        raw["hyperparams"]["max_iters"] = 1000
        raw["checks"] = ["descent", "corner_condition"]
        path = tmp_path / "f1.json"
        path.write_text(json.dumps(raw))
        assert cli.main(["check", str(path), "--out", str(tmp_path / "o")]) == 1
        assert sorted(p.name for p in (tmp_path / "o").iterdir()) == ["checks.json"]

    def test_assumption_violation_and_override(self, tmp_path):
        raw = json.loads(Path(small_config(tmp_path)).read_text())
        raw["hyperparams"]["eta"] = 50.0
        raw["checks"] = []
        path = tmp_path / "big.json"
        path.write_text(json.dumps(raw))
        assert cli.main(["run", str(path), "--out", str(tmp_path / "o")]) == 2
        assert cli.main(["run", str(path), "--out", str(tmp_path / "o"), "--override-assumptions"]) == 0

    def test_single_run_skips_report(self, tmp_path):
        out = tmp_path / "o"
        assert cli.main(["run", small_config(tmp_path, runs=["gd"], checks=["descent"]), "--out", str(out)]) == 0
        assert not (out / "direction_report.json").exists()

    def test_infeasible_dataset(self, tmp_path):
        c = small_config(tmp_path, dataset={"points": [[1.0, 0.0], [-1.0, 0.0]], "labels": [1, 1]})
        assert cli.main(["run", c, "--out", str(tmp_path / "o")]) == 2


class TestFigureData:
    def test_figure2_tangency_at_corner(self, tmp_path):
        out = tmp_path / "fig2"
        assert cli.main(["figure-data", cfg("figure2"), "--out", str(out), "--max-iters", "20000"]) == 0
        pts = {r["name"]: np.array([float(r["x"]), float(r["y"])]) for r in read_csv(out / "points.csv")}
        corner = np.array(example32_oracle(1, 1, 5 * math.pi / 8, -math.pi / 8))
        np.testing.assert_allclose(pts["tangency"], corner, rtol=1e-12)
        poly = np.array([[float(r["x"]), float(r["y"])] for r in read_csv(out / "feasible_region.csv")])
        assert np.min(np.linalg.norm(poly - corner, axis=1)) < 1e-12
        assert np.all(poly @ figure2_data().signed_features.T >= 1 - 1e-12)

    def test_figure1_tangency_off_svm(self, tmp_path):
        out = tmp_path / "fig1"
        assert cli.main(["figure-data", cfg("figure1"), "--out", str(out), "--max-iters", "100000"]) == 0
        arrows = {r["name"]: np.array([float(r["x"]), float(r["y"])]) for r in read_csv(out / "arrows.csv")}
        assert np.linalg.norm(arrows["svm"] - arrows["adagrad_predicted"]) > 0.1
        meta = json.loads((out / "figure_meta.json").read_text())
        ell = np.array([[float(r["x"]), float(r["y"])] for r in read_csv(out / "ellipse.csv")])
        h = np.array(meta["h_inf"])
        np.testing.assert_allclose(np.sum(ell**2 / h, axis=1), meta["ellipse_level"], rtol=1e-12)

    def test_single_constraint_closed_form(self, tmp_path):
        c = small_config(tmp_path, dataset={"points": [[2.0, 1.0]], "labels": [1]}, loss="logistic", checks=[])
        raw = json.loads(Path(c).read_text())
        raw["hyperparams"]["eta"] = 0.2
        Path(c).write_text(json.dumps(raw))
        out = tmp_path / "one"
        assert cli.main(["figure-data", c, "--out", str(out)]) == 0
        h = np.array(json.loads((out / "figure_meta.json").read_text())["h_inf"])
        z = np.array([2.0, 1.0])
        # Lagrange condition: w = h * z / <h * z, z>
        expected = h * z / ((h * z) @ z)
        pts = {r["name"]: np.array([float(r["x"]), float(r["y"])]) for r in read_csv(out / "points.csv")}
        np.testing.assert_allclose(pts["tangency"], expected, rtol=1e-12)
        poly = np.array([[float(r["x"]), float(r["y"])] for r in read_csv(out / "feasible_region.csv")])
        on_line = np.abs(poly @ z - 1.0) < 1e-12
        assert on_line.sum() >= 2

    def test_requires_planar_data(self, tmp_path):
        c = cfg("planted_logistic")
        assert cli.main(["figure-data", c, "--out", str(tmp_path / "o"), "--max-iters", "10"]) == 2

    def test_clip_halfplanes_square(self):
        poly = cli.clip_halfplanes(2.0, np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert {tuple(np.round(v, 12)) for v in poly} == {(1.0, 1.0), (2.0, 1.0), (2.0, 2.0), (1.0, 2.0)}


class TestSweep:
    def test_figure1_eta_sweep_reports(self, tmp_path):
        out = tmp_path / "sw"
        code = cli.main(
            ["sweep", cfg("figure1"), "--axis", "eta", "--values", "0.01,0.05,0.1", "--out", str(out), "--max-iters", "20000"]
        )
        assert code == 0
        rows = read_csv(out / "sweep_summary.csv")
        assert [r["value"] for r in rows] == ["0.01", "0.05", "0.1"]
        assert len(list(out.glob("direction_report_*.json"))) == 3

    @pytest.mark.parametrize("axis, values", [("eta", "0.05,0.2"), ("epsilon", "1e-8,1e-4"), ("w0", "0:0,0.1:-0.1")])
    def test_figure2_any_sweep_equal(self, tmp_path, axis, values):
        out = tmp_path / axis
        assert cli.main(["sweep", cfg("figure2"), "--axis", axis, "--values", values, "--out", str(out), "--max-iters", "5000"]) == 0
        corner = np.array(example32_oracle(1, 1, 5 * math.pi / 8, -math.pi / 8))
        for r in read_csv(out / "sweep_summary.csv"):
            d = np.array([float(r["pred_dir_1"]), float(r["pred_dir_2"])])
            np.testing.assert_allclose(d, corner / np.linalg.norm(corner), atol=1e-6)

    def test_empty_and_malformed_values(self, tmp_path):
        assert cli.main(["sweep", cfg("figure2"), "--axis", "eta", "--values", "", "--out", str(tmp_path)]) == 2
        assert cli.main(["sweep", cfg("figure2"), "--axis", "w0", "--values", "1:2:3", "--out", str(tmp_path)]) == 2
        assert cli.main(["sweep", cfg("figure2"), "--axis", "eta", "--values", "abc", "--out", str(tmp_path)]) == 2


def test_weighted_solution_matches_report(tmp_path):
    out = tmp_path / "o"
    cli.main(["run", small_config(tmp_path), "--out", str(out)])
    rep = json.loads((out / "direction_report.json").read_text())
    w = solve_weighted_margin(MarginProblem(figure2_data().signed_features, 1 / np.sqrt(rep["h_inf"]))).w_star
    np.testing.assert_allclose(rep["adagrad_predicted_w"], w, rtol=1e-14)
