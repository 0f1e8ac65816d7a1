import csv
import json

import pytest

from vri import cli
from vri.potential import ConvergenceError

from conftest import CRITICAL_TABLES, LOBE_C_VALUES

SMALL_LD = ["--grid", "25x21", "--tau", "2", "--step", "0.005"]


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr() if capsys is not None else None
    return code, out


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


class TestCriticalPoints:
    def test_table_at_c0(self, tmp_path, capsys):
        code, out = run(["critical-points", "--c", 0, "--out", tmp_path], capsys)
        assert code == 0
        rows = {r["kind"]: r for r in read_rows(tmp_path / "critical_points.csv")}
        for kind, x, y, energy, stability in CRITICAL_TABLES[0.0]:
            r = rows[kind]
            assert float(r["x"]) == pytest.approx(x, abs=1e-3)
            assert float(r["y"]) == pytest.approx(y, abs=1e-3)
            assert float(r["energy"]) == pytest.approx(energy, abs=1e-3)
            assert r["stability"] == stability
        assert "well-top" in out.out

    def test_lower_saddle_at_c02(self, tmp_path):
        run(["critical-points", "--c", 0.2, "--out", tmp_path])
        r = next(r for r in read_rows(tmp_path / "critical_points.csv") if r["kind"] == "index1-saddle-lower")
        got = [float(r[k]) for k in ("x", "y", "energy")]
        assert got == pytest.approx([0.9994, 0.0671, -1.3266], abs=1e-3)

    def test_json_variant_identical(self, tmp_path, capsys):
        run(["critical-points", "--c", 0, "--out", tmp_path / "a"], capsys)
        code, out = run(["critical-points", "--c", 0, "--json", "--out", tmp_path / "b"], capsys)
        assert code == 0
        printed = json.loads(out.out)
        table = read_rows(tmp_path / "a" / "critical_points.csv")
        assert [(r["kind"], float(r["x"]), float(r["y"]), float(r["energy"])) for r in table] == [
            (r["kind"], r["x"], r["y"], r["energy"]) for r in printed
        ]

    def test_solver_failure_exit_status(self, tmp_path, monkeypatch, capsys):
        def fail(*a, **k):
            raise ConvergenceError("no convergence", [], [(9.0, 9.0)])

        monkeypatch.setattr(cli, "find_critical_points", fail)
        code, out = run(["critical-points", "--out", tmp_path], capsys)
        assert code == 2
        assert "numerical failure" in out.err


class TestMetadata:
    def test_effective_config_recorded(self, tmp_path):
        run(["critical-points", "--c", 0.1, "--out", tmp_path])
        meta = json.loads((tmp_path / "metadata.json").read_text())
        cfg = meta["config"]
        assert cfg["c"] == [0.1] and cfg["H0"] == 0.1 and cfg["threads"] == 1
        assert cfg["command"] == "critical-points"

    def test_config_file_then_flags(self, tmp_path):
        conf = tmp_path / "conf.json"
        conf.write_text(json.dumps({"n_traj": 10, "c": [0.3]}))
        run(["branching", "--config", conf, "--c", 0.0, "--out", tmp_path / "o"])
        cfg = json.loads((tmp_path / "o" / "metadata.json").read_text())["config"]
        assert cfg["n_traj"] == 10 and cfg["c"] == [0.0]

    def test_config_replays(self, tmp_path):
        run(["branching", "--c", 0.1, "--n-traj", 40, "--out", tmp_path / "a"])
        cfg = json.loads((tmp_path / "a" / "metadata.json").read_text())["config"]
        replay = {k: v for k, v in cfg.items() if k not in ("command", "out")}
        conf = tmp_path / "replay.json"
        conf.write_text(json.dumps(replay))
        run(["branching", "--config", conf, "--out", tmp_path / "b"])
        assert (tmp_path / "a" / "branching.csv").read_bytes() == (tmp_path / "b" / "branching.csv").read_bytes()


class TestValidation:
    @pytest.mark.parametrize(
        "argv",
        [
            ["ld-field", "--tau", "-1"],
            ["ld-field", "--quantile", "1.5"],
            ["ld-field", "--grid", "1x5"],
            ["ld-field", "--grid", "axb"],
            ["branching", "--n-traj", "1"],
            ["branching", "--threads", "0"],
            ["critical-points", "--m-x", "0"],
            ["sweep", "--c", "0.7"],
            ["fit", "--table", "/nonexistent/sweep.csv"],
            ["sweep", "--nonsense"],
        ],
    )
    def test_rejected_with_status_1(self, argv, tmp_path, capsys):
        code, out = run(argv + ["--out", tmp_path], capsys)
        assert code == 1
        assert "error" in out.err
        assert not list(tmp_path.iterdir())

    def test_unknown_config_key(self, tmp_path, capsys):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"colour": "red"}))
        code, out = run(["branching", "--config", conf, "--out", tmp_path / "o"], capsys)
        assert code == 1 and "colour" in out.err


class TestLDField:
    def test_outputs(self, tmp_path):
        assert run(["ld-field", "--c", 0.1, *SMALL_LD, "--out", tmp_path])[0] == 0
        for name in ("ld_c0.1.bin", "ld_c0.1.json", "ld_c0.1.csv", "ld_c0.1.png",
                     "curves_c0.1.csv", "lobes_c0.1.csv", "lobes_c0.1.json"):
            assert (tmp_path / name).is_file(), name

    def test_repeatable_at_any_thread_count(self, tmp_path):
        for i, threads in enumerate((1, 1, 3)):
            run(["ld-field", "--c", 0.2, *SMALL_LD, "--no-image", "--threads", threads, "--out", tmp_path / str(i)])
        ref = (tmp_path / "0" / "ld_c0.2.csv").read_bytes()
        for i in (1, 2):
            assert (tmp_path / str(i) / "ld_c0.2.csv").read_bytes() == ref
            assert (tmp_path / str(i) / "curves_c0.2.csv").read_bytes() == (tmp_path / "0" / "curves_c0.2.csv").read_bytes()

    def test_batch_of_six_images(self, tmp_path):
        code, _ = run(["ld-field", "--c", *LOBE_C_VALUES, "--grid", "15", "--tau", "1", "--step", "0.01",
                       "--no-csv", "--out", tmp_path])
        assert code == 0
        assert len(list(tmp_path.glob("ld_c*.png"))) == 6


class TestBranching:
    def test_symmetric_split(self, tmp_path):
        assert run(["branching", "--c", 0, "--out", tmp_path])[0] == 0
        (row,) = read_rows(tmp_path / "branching.csv")
        assert float(row["ratio_top"]) == pytest.approx(0.5, abs=0.02)
        assert int(row["n_top"]) + int(row["n_bottom"]) + int(row["n_unresolved"]) == int(row["n_total"]) == 1000

    def test_labels_and_plot(self, tmp_path):
        run(["branching", "--c", 0.1, 0.3, "--n-traj", 30, "--labels", "--out", tmp_path])
        assert (tmp_path / "branching.png").is_file()
        fates = read_rows(tmp_path / "fates_c0.1.csv")
        assert len(fates) == 30 and list(fates[0]) == ["index", "y0", "fate"]

    def test_thread_count_irrelevant(self, tmp_path):
        for t in (1, 4):
            run(["branching", "--c", 0.25, "--n-traj", 200, "--threads", t, "--labels", "--out", tmp_path / str(t)])
        for name in ("branching.csv", "fates_c0.25.csv"):
            assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "4" / name).read_bytes()


class TestSweepAndFit:
    def test_depth_report(self, tmp_path, capsys):
        code, out = run(["sweep", "--quantities", "depth-bottom", "depth-top", "--out", tmp_path], capsys)
        assert code == 0
        report = json.loads((tmp_path / "fit.json").read_text())
        d = report["depth-bottom"]
        assert d["coefficients"] == pytest.approx([1.042, 1.943], abs=0.02)
        assert d["reference_coefficients"] == [1.042, 1.943]
        assert "depth-bottom" in out.out and (tmp_path / "depth-bottom.png").is_file()

        code, _ = run(["fit", "--table", tmp_path / "sweep.csv", "--out", tmp_path / "refit"], capsys)
        assert code == 0
        again = json.loads((tmp_path / "refit" / "fit.json").read_text())
        assert again["depth-bottom"]["coefficients"] == d["coefficients"]

    def test_sweep_csv_repeatable(self, tmp_path):
        argv = ["sweep", "--c", 0.0, 0.1, 0.2, "--quantities", "ratio-bottom", "flatness-top",
                "--n-traj", 60, "--no-critical-c"]
        run(argv + ["--threads", 1, "--out", tmp_path / "a"])
        run(argv + ["--threads", 2, "--out", tmp_path / "b"])
        assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()

    def test_fit_on_single_point_fails(self, tmp_path, capsys):
        run(["sweep", "--c", 0.1, "--quantities", "depth-bottom", "--out", tmp_path / "s"], capsys)
        code, out = run(["fit", "--table", tmp_path / "s" / "sweep.csv", "--out", tmp_path / "f"], capsys)
        assert code == 1
        assert "distinct c" in out.err
        assert not (tmp_path / "f").exists()
