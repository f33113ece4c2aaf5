"""Subcommand behavior, exit codes, determinism, and output formats."""

import subprocess
import sys
import time

import numpy as np
import pytest

from eegrig.cli import EXIT_DATA, EXIT_OK, EXIT_RUNTIME, main
from eegrig.session import read_record


def run(args):
    return main([str(a) for a in args])


class TestSimulate:
    def test_writes_record_with_markers(self, tmp_path, capsys):
        out = tmp_path / "alpha.csv"
        assert run(["--seed", 1, "simulate", "--scenario", "alpha_test",
                    "--duration", 20, "--out", out]) == EXIT_OK
        record = read_record(out)
        assert record.samples.shape == (5000, 16)
        assert [m.label for m in record.markers] == ["eyes_closed", "eyes_open"] * 2
        assert "5000 frames" in capsys.readouterr().out

    def test_deterministic_given_seed(self, tmp_path):
        outs = []
        for name in ("a.csv", "b.csv"):
            out = tmp_path / name
            run(["--seed", 7, "simulate", "--scenario", "alpha_test", "--duration", 5,
                 "--out", out])
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        other = tmp_path / "c.csv"
        run(["--seed", 8, "simulate", "--scenario", "alpha_test", "--duration", 5,
             "--out", other])
        assert other.read_bytes() != outs[0]

    def test_scenario_file_input(self, tmp_path):
        scenario = tmp_path / "tone.scn"
        scenario.write_text("duration_s = 4\nsps = 250\n[channels 1-16]\nsine freq_hz=10 amplitude_uv=40\n")
        out = tmp_path / "tone.csv"
        assert run(["simulate", "--scenario", scenario, "--out", out]) == EXIT_OK
        record = read_record(out)
        assert record.samples.shape == (1000, 16)
        assert np.max(np.abs(record.samples)) == pytest.approx(40.0, rel=0.01)

    def test_unknown_scenario_is_data_error(self, tmp_path, capsys):
        code = run(["simulate", "--scenario", "zeta_waves", "--out", tmp_path / "x.csv"])
        assert code == EXIT_DATA
        assert "zeta_waves" in capsys.readouterr().err

    def test_too_short_artifact_duration_is_data_error(self, tmp_path):
        code = run(["simulate", "--scenario", "artifact_test", "--duration", 10,
                    "--out", tmp_path / "x.csv"])
        assert code == EXIT_DATA

    def test_invalid_gain_is_runtime_error(self, tmp_path):
        code = run(["simulate", "--scenario", "mains_noise", "--gain", 5,
                    "--out", tmp_path / "x.csv"])
        assert code == EXIT_RUNTIME

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as exc:
            main(["simulate"])  # missing required flags
        assert exc.value.code == 2


@pytest.fixture(scope="module")
def alpha_record(tmp_path_factory):
    out = tmp_path_factory.mktemp("rec") / "alpha.csv"
    run(["--seed", 1, "simulate", "--scenario", "alpha_test", "--duration", 30, "--out", out])
    return out


class TestAnalyze:

    def test_alpha_table(self, alpha_record, tmp_path, capsys):
        table = tmp_path / "table.csv"
        assert run(["analyze", "--in", alpha_record, "--report", "alpha", "--out", table]) == EXIT_OK
        printed = capsys.readouterr().out
        assert "ratio" in printed
        lines = table.read_text().splitlines()
        assert lines[0] == "channel,label,closed_power_uV2,open_power_uV2,ratio"
        assert len(lines) == 17
        ratios = [float(line.split(",")[4]) for line in lines[1:]]
        assert all(r > 1 for r in ratios)

    def test_artifact_counts_printed(self, tmp_path, capsys):
        record = tmp_path / "art.csv"
        run(["--seed", 3, "simulate", "--scenario", "artifact_test", "--out", record])
        assert run(["analyze", "--in", record, "--report", "artifact"]) == EXIT_OK
        printed = capsys.readouterr().out
        assert "chew: [4, 3, 2, 1]" in printed
        assert "blink: [4, 3, 2, 1]" in printed

    def test_missing_markers_is_data_error(self, tmp_path, capsys):
        record = tmp_path / "hum.csv"
        run(["simulate", "--scenario", "mains_noise", "--duration", 10, "--out", record])
        assert run(["analyze", "--in", record, "--report", "alpha"]) == EXIT_DATA

    def test_missing_file_is_data_error(self, tmp_path):
        assert run(["analyze", "--in", tmp_path / "nope.csv", "--report", "alpha"]) == EXIT_DATA

    def test_corrupt_record_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("not,a,record\n1,2,3\n")
        assert run(["analyze", "--in", bad, "--report", "alpha"]) == EXIT_DATA


class TestRecord:
    def test_session_markers_exact(self, tmp_path, capsys):
        out = tmp_path / "sess.csv"
        assert run(["--seed", 1, "record", "--protocol", "alpha", "--cycles", 3,
                    "--scenario", "alpha_test", "--out", out]) == EXIT_OK
        record = read_record(out)
        assert len(record.markers) == 6
        for marker in record.markers:
            assert (marker.t_end_s - marker.t_start_s) * 250 == 1250
        assert not record.incomplete
        assert "complete" in capsys.readouterr().out


class TestReplay:
    def test_unpaced_rerecord_identical(self, tmp_path):
        original = tmp_path / "a.csv"
        run(["--seed", 2, "simulate", "--scenario", "alpha_test", "--duration", 6, "--out", original])
        copy = tmp_path / "b.csv"
        assert run(["replay", "--in", original, "--speed", 0, "--out", copy]) == EXIT_OK
        a, b = read_record(original), read_record(copy)
        assert np.array_equal(a.samples, b.samples)
        assert a.markers == b.markers

    def test_paced_replay_tracks_wall_clock(self, tmp_path):
        original = tmp_path / "a.csv"
        run(["simulate", "--scenario", "mains_noise", "--duration", 2, "--out", original])
        t0 = time.monotonic()
        assert run(["replay", "--in", original, "--speed", 1]) == EXIT_OK
        assert time.monotonic() - t0 == pytest.approx(2.0, abs=0.3)

    def test_double_speed_halves_time(self, tmp_path):
        original = tmp_path / "a.csv"
        run(["simulate", "--scenario", "mains_noise", "--duration", 2, "--out", original])
        t0 = time.monotonic()
        run(["replay", "--in", original, "--speed", 4])
        assert time.monotonic() - t0 == pytest.approx(0.5, abs=0.3)


class TestIngest:
    def test_plain_csv(self, tmp_path, capsys):
        src = tmp_path / "ext.csv"
        src.write_text("\n".join(",".join(["2.5"] * 16) for _ in range(500)) + "\n")
        out = tmp_path / "rec.csv"
        assert run(["ingest", "--in", src, "--sps", 250, "--unit", "uV", "--out", out]) == EXIT_OK
        record = read_record(out)
        assert record.samples.shape == (500, 16)
        assert record.samples[0, 0] == 2.5
        assert "0 skipped" in capsys.readouterr().out

    def test_volt_scaling_and_columns(self, tmp_path):
        src = tmp_path / "ext.csv"
        header = "time," + ",".join(f"e{k}" for k in range(16))
        rows = [header] + [f"{i}," + ",".join(["0.00004"] * 16) for i in range(300)]
        src.write_text("\n".join(rows) + "\n")
        out = tmp_path / "rec.csv"
        columns = ",".join(f"e{k}" for k in range(16))
        assert run(["ingest", "--in", src, "--sps", 250, "--unit", "V",
                    "--columns", columns, "--out", out]) == EXIT_OK
        assert read_record(out).samples[0, 0] == pytest.approx(40.0)

    def test_narrow_table_is_data_error(self, tmp_path):
        src = tmp_path / "ext.csv"
        src.write_text("1,2,3\n")
        assert run(["ingest", "--in", src, "--sps", 250, "--out", tmp_path / "r.csv"]) == EXIT_DATA


class TestServeDefaults:
    def test_serve_binds_loopback_unless_told_otherwise(self):
        from eegrig.cli import build_parser

        args = build_parser().parse_args(["serve"])
        assert args.bind == "127.0.0.1"


class TestEntryPoint:
    def test_module_invocation(self):
        result = subprocess.run([sys.executable, "-m", "eegrig", "--version"],
                                capture_output=True, text=True)
        assert result.returncode == 0
        assert "eegrig" in result.stdout

    def test_pipeline_via_subprocess(self, tmp_path):
        out = tmp_path / "alpha.csv"
        sim = subprocess.run(
            [sys.executable, "-m", "eegrig", "--seed", "1", "simulate", "--scenario",
             "alpha_test", "--duration", "10", "--out", str(out)],
            capture_output=True, text=True)
        assert sim.returncode == 0
        ana = subprocess.run(
            [sys.executable, "-m", "eegrig", "analyze", "--in", str(out), "--report", "alpha"],
            capture_output=True, text=True)
        assert ana.returncode == 0
        assert "ratio" in ana.stdout
