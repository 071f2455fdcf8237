from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from frontfill import cli


def run(argv):
    return cli.main(argv)


class TestParsing:
    def test_domain_disc(self):
        dom = cli.parse_domain("disc:2.5", 2)
        assert dom.radius == 2.5 and dom.dim == 2

    def test_domain_box_scalar(self):
        dom = cli.parse_domain("box:0..1", 3)
        assert dom.dim == 3
        np.testing.assert_array_equal(dom.lo, [0, 0, 0])

    def test_domain_box_per_axis(self):
        dom = cli.parse_domain("box:0,0..2,1", 2)
        np.testing.assert_array_equal(dom.hi, [2, 1])

    def test_bad_domain(self):
        with pytest.raises(cli.UsageError):
            cli.parse_domain("sphere:1", 2)
        with pytest.raises(cli.UsageError):
            cli.parse_domain("disc:abc", 2)

    def test_spacing_constant_and_radial(self):
        dom = cli.parse_domain("disc:1.0", 2)
        s = cli.parse_spacing("0.05", dom)
        assert s.at([0, 0]) == 0.05
        r = cli.parse_spacing("0.01:0.02", dom)
        assert r.at([0.0, 0.0]) == pytest.approx(0.01)

    def test_usage_exit_code(self, capsys):
        assert run(["fill", "--domain", "nope:1"]) == cli.EXIT_USAGE
        assert "usage error" in capsys.readouterr().err


class TestFillCommand:
    def test_smoke_csv(self, tmp_path, capsys):
        out = tmp_path / "pts.csv"
        code = run(
            ["fill", "--domain", "disc:1.0", "--h", "0.1", "--threads", "1",
             "--seed", "42", "--out", str(out)]
        )
        assert code == 0
        rows = out.read_text().strip().splitlines()
        assert rows[0] == "x0,x1"
        assert len(rows) > 100

    def test_deterministic_sequential_output(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        argv = ["fill", "--domain", "disc:1.0", "--h", "0.1", "--threads", "1", "--seed", "7"]
        assert run(argv + ["--out", str(a)]) == 0
        assert run(argv + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_parallel_owner_column_and_events(self, tmp_path):
        out = tmp_path / "p.csv"
        ev = tmp_path / "ev.csv"
        stats = tmp_path / "stats.json"
        code = run(
            ["fill", "--domain", "disc:1.0", "--h", "0.05", "--threads", "3",
             "--seed", "1", "--out", str(out), "--events", str(ev),
             "--stats", str(stats), "--validate"]
        )
        assert code == 0
        header = out.read_text().splitlines()[0]
        assert header == "x0,x1,owner_thread"
        assert ev.read_text().splitlines()[0] == "timestamp_ns,thread,cell,transition"
        doc = json.loads(stats.read_text())
        assert doc["stats"]["points_inserted"] > 0
        assert doc["validation"]["containment_failures"] == 0

    def test_dim3_fill(self, tmp_path):
        out = tmp_path / "p3.csv"
        code = run(
            ["fill", "--domain", "disc:1.0", "--h", "0.15", "--dim", "3",
             "--threads", "2", "--seed", "0", "--out", str(out), "--pin"]
        )
        assert code == 0
        header = out.read_text().splitlines()[0]
        assert header == "x0,x1,x2,owner_thread"

    def test_roundtrip_17_digits(self, tmp_path):
        out = tmp_path / "pts.csv"
        run(["fill", "--domain", "disc:1.0", "--h", "0.2", "--threads", "1",
             "--seed", "3", "--out", str(out)])
        from frontfill.fill import FillConfig, fill_sequential
        from frontfill.geometry import ConstantSpacing, Disc

        cfg = FillConfig(domain=Disc(center=[0.0, 0.0], radius=1.0),
                         spacing=ConstantSpacing(0.2), rng_seed=3)
        pts, _ = fill_sequential(cfg, [np.zeros(2)])
        loaded = cli.read_points_csv(str(out))
        np.testing.assert_array_equal(loaded, pts.coords)

    def test_validate_flag_catches_bad_points(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("x0,x1\n0.0,0.0\n0.0,0.0\n")  # duplicated point
        code = run(["validate", "--domain", "disc:1.0", "--h", "0.1", str(bad)])
        assert code == cli.EXIT_INVARIANT
        doc = json.loads(capsys.readouterr().out)
        assert len(doc["violating_pairs"]) >= 1

    def test_validate_good_file(self, tmp_path, capsys):
        out = tmp_path / "pts.csv"
        run(["fill", "--domain", "disc:1.0", "--h", "0.1", "--threads", "1",
             "--seed", "5", "--out", str(out)])
        capsys.readouterr()  # drop the fill's summary line
        code = run(["validate", "--domain", "disc:1.0", "--h", "0.1", str(out)])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["violating_pairs"] == []
        assert doc["coverage_max_gap"] <= 2.0

    def test_malformed_file_reports_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("x0,x1\n0.0,0.0\nnot,a,number\n")
        code = run(["validate", "--domain", "disc:1.0", "--h", "0.1", str(bad)])
        assert code == cli.EXIT_USAGE
        assert ":3:" in capsys.readouterr().err

    def test_missing_file_is_usage_error(self):
        assert run(["validate", "--domain", "disc:1.0", "--h", "0.1", "/nope.csv"]) == cli.EXIT_USAGE


class TestBenchCommands:
    def test_bench_row_count(self, tmp_path):
        out = tmp_path / "bench.csv"
        code = run(
            ["bench", "--domain", "disc:1.0", "--h", "0.1,0.05", "--threads", "1,2",
             "--reps", "2", "--out", str(out)]
        )
        assert code == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 8  # 2 h x 2 threads x 2 reps
        for r in rows:
            assert float(r["throughput_per_thread"]) == pytest.approx(
                float(r["throughput"]) / int(r["threads"])
            )
            assert r["hostname"]

    def test_sweep_leaf_rows(self, tmp_path):
        out = tmp_path / "sweep.csv"
        code = run(
            ["sweep-leaf", "--domain", "disc:1.0", "--h", "0.1", "--threads", "2",
             "--limits", "50,100", "--reps", "1", "--out", str(out)]
        )
        assert code == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == 2
        assert sorted(int(r["work_leaf_limit"]) for r in rows) == [50, 100]
        flags = {int(r["work_leaf_limit"]): r["default_recommendation"] for r in rows}
        assert flags[100] == "True" and flags[50] == "False"

    def test_bad_reps(self):
        assert run(["bench", "--reps", "0", "--out", "x.csv"]) == cli.EXIT_USAGE


class TestInternalError:
    def test_exit_code_3(self, monkeypatch, capsys):
        def boom(cfg):
            raise RuntimeError("synthetic failure")

        monkeypatch.setattr(cli, "run_one_fill", boom)
        code = run(["fill", "--domain", "disc:1.0", "--h", "0.1", "--threads", "1"])
        assert code == cli.EXIT_INTERNAL
        assert "synthetic failure" in capsys.readouterr().err
