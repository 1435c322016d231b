import csv
import json
import os
import stat

import numpy as np
import pytest

from sdlab.cli import main
from sdlab.features import save_features_csv


def read_csv(path):
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        return header, list(reader)


class TestRidgeSweep:
    def test_default_run_has_ten_rows(self, tmp_path):
        assert main(["ridge-sweep", f"out={tmp_path}"]) == 0
        header, rows = read_csv(tmp_path / "ridge-sweep-gamma-0.25.csv")
        assert header == ["lambda", "e_reg", "e_sd", "xi_star", "e_sd_prime"]
        assert len(rows) == 10

    def test_one_file_per_gamma(self, tmp_path):
        assert main(["ridge-sweep", "gamma=0.125,0.5", f"out={tmp_path}"]) == 0
        assert (tmp_path / "ridge-sweep-gamma-0.125.csv").exists()
        assert (tmp_path / "ridge-sweep-gamma-0.5.csv").exists()

    def test_repeatable_flags_make_one_file_each(self, tmp_path):
        assert main(["ridge-sweep", "--gamma", "0.125", "--gamma", "0.5",
                     "--out", str(tmp_path)]) == 0
        assert (tmp_path / "ridge-sweep-gamma-0.125.csv").exists()
        assert (tmp_path / "ridge-sweep-gamma-0.5.csv").exists()

    def test_thread_cap_does_not_change_results(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SD_LAB_THREADS", "1")
        assert main(["logit-figure1", "r=0.3", "n=500", f"out={tmp_path / 'a'}"]) == 0
        monkeypatch.setenv("SD_LAB_THREADS", "4")
        assert main(["logit-figure1", "r=0.3", "n=500", f"out={tmp_path / 'b'}"]) == 0
        a = (tmp_path / "a" / "logit-figure1-r-0.3.csv").read_bytes()
        b = (tmp_path / "b" / "logit-figure1-r-0.3.csv").read_bytes()
        assert a == b

    def test_reruns_are_byte_identical(self, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        assert main(["ridge-sweep", f"out={a_dir}"]) == 0
        assert main(["ridge-sweep", f"out={b_dir}"]) == 0
        a = (a_dir / "ridge-sweep-gamma-0.25.csv").read_bytes()
        b = (b_dir / "ridge-sweep-gamma-0.25.csv").read_bytes()
        assert a == b

    def test_csv_roundtrips_to_float_exactly(self, tmp_path):
        assert main(["ridge-sweep", f"out={tmp_path}"]) == 0
        header, rows = read_csv(tmp_path / "ridge-sweep-gamma-0.25.csv")
        from sdlab.tuning import error_curve_sweep
        records = error_curve_sweep(0.25)
        for row, record in zip(rows, records):
            assert float(row[0]) == record.lam
            assert float(row[1]) == record.e_reg
            assert float(row[2]) == record.e_sd

    def test_run_record_embeds_config_and_version(self, tmp_path):
        assert main(["ridge-sweep", f"out={tmp_path}"]) == 0
        record = json.loads((tmp_path / "ridge-sweep.run.json").read_text())
        assert record["command"] == "ridge-sweep"
        assert record["version"]
        assert record["config"]["gamma"] == [0.25]
        assert record["outputs"] == ["ridge-sweep-gamma-0.25.csv"]


class TestLogitFigure1:
    def test_bounds_constant_and_regimes(self, tmp_path):
        assert main(["logit-figure1", "r=0.2", "n=1000", f"out={tmp_path}"]) == 0
        header, rows = read_csv(tmp_path / "logit-figure1-r-0.2.csv")
        assert header == ["p", "teacher_acc", "student_acc",
                          "bound_lo", "bound_hi", "status"]
        assert len(rows) == 99
        bounds = {(row[3], row[4]) for row in rows}
        assert len(bounds) == 1
        lo, hi = (float(v) for v in bounds.pop())
        assert abs(lo - 0.423) < 1e-3 and abs(hi - 0.475) < 1e-3
        by_p = {float(row[0]): row for row in rows}
        assert float(by_p[0.01][1]) == 1.0                    # tiny corruption
        assert float(by_p[0.49][1]) == pytest.approx(0.51)    # heavy corruption
        assert float(by_p[0.49][2]) == pytest.approx(0.51)
        assert all(row[5] == "ok" for row in rows)


    def test_solver_failures_set_status_and_exit_code(self, tmp_path, monkeypatch):
        import sdlab.cli as cli
        from sdlab.exceptions import SolverError

        real_row = cli.accuracy_row

        def flaky(setting):
            if setting.p > 0.25:
                raise SolverError("synthetic failure", residual=1.0)
            return real_row(setting)

        monkeypatch.setattr(cli, "accuracy_row", flaky)
        assert main(["logit-figure1", "r=0.3", "n=500", f"out={tmp_path}"]) == 3
        header, rows = read_csv(tmp_path / "logit-figure1-r-0.3.csv")
        failed = [row for row in rows if row[5].startswith("solver_error")]
        assert failed and all(row[1] == "" for row in failed)


class TestGramTable:
    def test_default_shape_is_eight_rows(self, tmp_path):
        assert main(["gram-table", "n=200", f"out={tmp_path}"]) == 0
        header, rows = read_csv(tmp_path / "gram-table.csv")
        assert header == ["model", "group", "kind", "value"]
        assert len(rows) == 8
        kinds = {(row[0], row[1], row[2]) for row in rows}
        assert len(kinds) == 8

    def test_detail_json_written(self, tmp_path):
        assert main(["gram-table", "n=200", f"out={tmp_path}"]) == 0
        detail = json.loads((tmp_path / "gram-table.detail.json").read_text())
        assert len(detail["rows"]) == 4


class TestProbeCommands:
    def test_sweep_rows_match_grid(self, tmp_path):
        code = main([
            "probe-sweep", "classes=3", "dim=8", "train-per-class=40",
            "test-per-class=10", "epochs=40",
            "xi=0,0.25,0.5,0.75,1,1.25,1.5,2", f"out={tmp_path}",
        ])
        assert code == 0
        header, rows = read_csv(tmp_path / "probe-sweep.csv")
        assert len(rows) == 8
        summary = json.loads((tmp_path / "probe-sweep.summary.json").read_text())
        assert len(summary["results"]) == 8
        assert all("per_class_variability" in r for r in summary["results"])

    def test_feature_file_ingestion(self, tmp_path):
        rng = np.random.default_rng(0)
        features = rng.standard_normal((60, 6))
        labels = rng.integers(0, 3, size=60)
        save_features_csv(tmp_path / "f.csv", features, labels)
        code = main([
            "probe-run", f"features={tmp_path / 'f.csv'}", "epochs=30",
            "level=0.2", f"out={tmp_path}",
        ])
        assert code == 0
        header, rows = read_csv(tmp_path / "probe-run.csv")
        assert len(rows) == 1

    def test_junk_feature_file_is_invalid_input(self, tmp_path):
        junk = tmp_path / "junk.bin"
        junk.write_bytes(bytes(range(256)))
        assert main(["probe-run", f"features={junk}", f"out={tmp_path}"]) == 1

    def test_probe_csv_roundtrips(self, tmp_path):
        code = main([
            "probe-sweep", "classes=3", "dim=6", "train-per-class=30",
            "test-per-class=10", "epochs=30", "xi=0,1", f"out={tmp_path}",
        ])
        assert code == 0
        header, rows = read_csv(tmp_path / "probe-sweep.csv")
        for row in rows:
            for value in row:
                assert repr(float(value)) == value  # exact float round-trip


class TestSingleValueModes:
    def test_xi_star_prints_value(self, capsys):
        assert main(["xi-star"]) == 0
        out = capsys.readouterr().out.strip()
        assert float(out) > 1.0  # heavy-noise-free default still exceeds 1 here

    def test_lambda_compare_orders_pair(self, capsys):
        assert main(["lambda-compare", "gamma=0.25"]) == 0
        first, second = (float(v) for v in capsys.readouterr().out.split())
        assert first > second


class TestConfigHandling:
    def test_print_config_lists_defaults(self, capsys):
        assert main(["ridge-sweep", "--print-config"]) == 0
        out = capsys.readouterr().out
        assert "gamma = 0.25" in out
        assert "dim = 100" in out

    def test_config_file_and_flag_precedence(self, tmp_path, capsys):
        config = tmp_path / "run.cfg"
        config.write_text("# sweep setup\ngamma = 0.5\ndim = 50\n")
        assert main(["ridge-sweep", "--config", str(config),
                     "gamma=0.125", "--print-config"]) == 0
        out = capsys.readouterr().out
        assert "gamma = 0.125" in out   # flag wins
        assert "dim = 50" in out        # file beats default

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        config = tmp_path / "run.cfg"
        config.write_text("bogus = 1\n")
        assert main(["ridge-sweep", "--config", str(config)]) == 1

    def test_unknown_override_rejected(self):
        assert main(["ridge-sweep", "bogus=1"]) == 1

    def test_unparsable_value_rejected(self):
        assert main(["ridge-sweep", "gamma=abc"]) == 1


class TestExitCodes:
    def test_unwritable_path_is_io_error(self, tmp_path):
        blocked = tmp_path / "blocked"
        blocked.mkdir()
        os.chmod(blocked, stat.S_IRUSR | stat.S_IXUSR)
        if os.access(blocked / "x", os.W_OK) or os.geteuid() == 0:
            pytest.skip("cannot revoke write permission (running as root)")
        assert main(["ridge-sweep", f"out={blocked / 'sub'}"]) == 2

    def test_missing_config_file_is_io_error(self):
        assert main(["ridge-sweep", "--config", "/nonexistent/run.cfg"]) == 2
