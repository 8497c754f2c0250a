"""End-to-end tests of the command-line interface."""
import json

import numpy as np
import pytest
from click.testing import CliRunner

from choiforge.channel import choi_from_json
from choiforge.cli import CSV_COLUMNS, EXIT_STRICT, main
from choiforge.datagen import make_rng, random_orthogonal, unitary_dynamics_sample
from choiforge.fidelity import save_sample_jsonl


@pytest.fixture
def runner():
    return CliRunner()


def make_sample_file(path, n=2, m=200, seed=0):
    rng = make_rng(seed)
    u = random_orthogonal(n, rng)
    sample = unitary_dynamics_sample(u, m, rng, seed=seed)
    save_sample_jsonl(sample, path)
    return u


class TestUnitarySweep:
    def test_basic_and_strict(self, runner):
        result = runner.invoke(main, ["unitary-sweep", "--n", "2,3", "--m", "300",
                                      "--seed", "0", "--strict"])
        assert result.exit_code == 0, result.output
        lines = result.output.strip().splitlines()
        assert lines[0] == CSV_COLUMNS
        assert len(lines) == 3
        for line in lines[1:]:
            parts = line.split(",")
            assert parts[0] == "1"  # schema version
            assert parts[4] == "1"  # rank
            assert abs(float(parts[6]) - 1.0) <= 1e-6
            assert parts[9] == ""  # wall_ms empty without --timing
            assert parts[11] == "optimal"

    def test_byte_identical_repeat(self, runner, tmp_path):
        args = ["unitary-sweep", "--n", "2", "--m", "200", "--seed", "5"]
        a = runner.invoke(main, args + ["--out", str(tmp_path / "a.csv")])
        b = runner.invoke(main, args + ["--out", str(tmp_path / "b.csv")])
        assert a.exit_code == 0 and b.exit_code == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_timing_fills_column(self, runner):
        result = runner.invoke(
            main, ["unitary-sweep", "--n", "2", "--m", "150", "--timing"]
        )
        assert result.exit_code == 0
        row = result.output.strip().splitlines()[1].split(",")
        assert float(row[9]) > 0

    def test_env_seed(self, runner, tmp_path):
        args = ["unitary-sweep", "--n", "2", "--m", "150"]
        a = runner.invoke(main, args + ["--out", str(tmp_path / "a.csv")],
                          env={"CHOIFORGE_SEED": "7"})
        b = runner.invoke(main, args + ["--seed", "7", "--out", str(tmp_path / "b.csv")])
        assert a.exit_code == 0 and b.exit_code == 0
        assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()


class TestRandomSweeps:
    def test_d1_exact_trace_channel(self, runner):
        result = runner.invoke(
            main,
            ["random-sample-sweep", "--n", "3,5", "--d", "1", "--m", "400",
             "--seed", "0", "--strict"],
        )
        assert result.exit_code == 0, result.output
        rows = [l.split(",") for l in result.output.strip().splitlines()[1:]]
        for row in rows:
            assert int(row[4]) == int(row[1])  # rank = n
            assert abs(float(row[6]) - 1.0) <= 1e-8

    def test_rank_bound_strict(self, runner):
        result = runner.invoke(
            main,
            ["random-sample-sweep", "--n", "2,3", "--m", "300", "--seed", "1",
             "--strict"],
        )
        assert result.exit_code == 0, result.output
        for line in result.output.strip().splitlines()[1:]:
            row = line.split(",")
            assert int(row[4]) <= max(int(row[1]), int(row[2]))

    def test_random_matrix_deterministic_and_jobs(self, runner, tmp_path):
        args = ["random-matrix-sweep", "--n", "2,3", "--seed", "2"]
        a = runner.invoke(main, args + ["--out", str(tmp_path / "a.csv")])
        b = runner.invoke(main, args + ["--jobs", "2", "--out", str(tmp_path / "b.csv")])
        assert a.exit_code == 0 and b.exit_code == 0, (a.output, b.output)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_guardrail_refuses_large(self, runner):
        result = runner.invoke(main, ["random-matrix-sweep", "--n", "21", "--d", "21"])
        assert result.exit_code == EXIT_STRICT
        assert "allow-large" in result.output

    def test_channel_sweep_dominance(self, runner):
        result = runner.invoke(
            main,
            ["channel-sweep", "--n", "2,3", "--m", "300", "--seed", "3", "--strict"],
        )
        assert result.exit_code == 0, result.output
        for line in result.output.strip().splitlines()[1:]:
            row = line.split(",")
            assert float(row[6]) >= float(row[7]) - 1e-8


class TestProjective:
    def test_report(self, runner, tmp_path):
        out = tmp_path / "report.json"
        result = runner.invoke(
            main,
            ["projective", "--n", "4", "--d", "2", "--m", "400", "--seed", "0",
             "--solver", "both", "--strict", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        report = json.loads(out.read_text())
        assert report["sdp"]["rank"] == 1
        assert report["sdp"]["operator_error"] <= 1e-6
        assert abs(report["sdp"]["ratio_fidelity"] - 1.0) <= 1e-8
        assert report["lowrank"]["operator_error"] <= 1e-6


class TestSolveAndVerify:
    def test_round_trip(self, runner, tmp_path):
        sample_path = tmp_path / "sample.jsonl"
        make_sample_file(sample_path, n=2, m=250, seed=4)
        choi_path = tmp_path / "choi.json"
        report_path = tmp_path / "report.json"
        kraus_path = tmp_path / "kraus.json"
        dat_path = tmp_path / "problem.dat-s"
        trace_path = tmp_path / "trace.csv"
        result = runner.invoke(
            main,
            ["solve", "--sample", str(sample_path), "--solver", "both", "--ns", "1",
             "--out", str(choi_path), "--report-out", str(report_path),
             "--kraus-out", str(kraus_path), "--export-interchange", str(dat_path),
             "--trace", str(trace_path)],
        )
        assert result.exit_code == 0, result.output
        report = json.loads(report_path.read_text())
        assert report["sdp"]["status"] == "optimal"
        assert report["sdp"]["verify"]["ok"]
        assert report["sdp"]["rank"] == 1
        assert abs(report["lowrank"]["fidelity"] - report["sdp"]["objective"]) <= 1e-6 * (
            1 + abs(report["sdp"]["objective"])
        )
        choi = choi_from_json(choi_path.read_text())
        assert choi.dim == 4
        assert json.loads(kraus_path.read_text())["n_s"] == 1
        # interchange file parses: header plus entry lines of five fields
        lines = dat_path.read_text().strip().splitlines()
        assert int(lines[0]) == 3 and int(lines[2]) == 4
        for line in lines[4:]:
            assert len(line.split()) == 5
        assert trace_path.read_text().startswith(
            "iteration,rel_gap,primal_residual,dual_residual"
        )
        # independent verification of the persisted artifact
        vres = runner.invoke(
            main, ["verify", "--choi", str(choi_path), "--sample", str(sample_path)]
        )
        assert vres.exit_code == 0, vres.output
        vreport = json.loads(vres.output)
        assert vreport["rank"] == 1
        assert vreport["min_eig"] >= -1e-8
        assert vreport["constraint_residual"] <= 1e-6
        assert abs(vreport["fidelity"] - report["sdp"]["objective"]) <= 1e-9 * (
            1 + abs(report["sdp"]["objective"])
        )

    def test_s_file_input(self, runner, tmp_path):
        rng = make_rng(5)
        dim = 4
        a = rng.uniform(-1, 1, (dim, dim))
        s = ((a + a.T) / 2).reshape(-1).tolist()
        s_path = tmp_path / "s.json"
        s_path.write_text(json.dumps({"n": 2, "d": 2, "s": s}))
        result = runner.invoke(main, ["solve", "--s-file", str(s_path)])
        assert result.exit_code == 0, result.output
        report = json.loads(result.output)
        assert report["sdp"]["verify"]["ok"]

    def test_malformed_sample_diagnostic(self, runner, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"n": 2, "d": 2, "seed": 0}\n{"in": [1, 0]}\n')
        result = runner.invoke(main, ["solve", "--sample", str(bad)])
        assert result.exit_code == EXIT_STRICT
        assert ":2:" in result.output

    def test_exactly_one_input_required(self, runner):
        result = runner.invoke(main, ["solve"])
        assert result.exit_code != 0
        assert "exactly one" in result.output
