"""Unit tests for the gridmrf command line."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from gridmrf.__main__ import cli, parse_floats, parse_grid, parse_ints
from gridmrf.gridfile import RunRecord, read_grid, write_grid


@pytest.fixture
def runner() -> CliRunner:
    """Click test runner."""
    return CliRunner()


@pytest.fixture
def data_file(tmp_path: Path, make_field) -> Path:
    """6x6 grid file with three missing cells."""
    field = make_field((6, 6), [(1, 1), (2, 4), (5, 0)], seed=17, mean=0.5)
    return write_grid(tmp_path / "data.txt", field)


def _invoke(runner: CliRunner, args: list[str]) -> dict:
    result = runner.invoke(cli, ["--threads", "1", *args])
    assert result.exit_code == 0, result.output
    return json.loads(result.output)


class TestParsers:
    """Tests for the option parsers."""

    @pytest.mark.parametrize(
        ("text", "expected"), [("100x100", (100, 100)), ("20X30", (20, 30))]
    )
    def test_parse_grid_valid(self, text: str, expected: tuple[int, int]) -> None:
        """test that N1xN2 strings parse to integer pairs."""
        assert parse_grid(text) == expected

    @pytest.mark.parametrize("text", ["100", "axb", "10x0", "1x2x3", "-4x4"])
    def test_parse_grid_invalid(self, text: str) -> None:
        """test that malformed sizes raise ValueError with the expected format."""
        with pytest.raises(ValueError, match="use N1xN2 format"):
            parse_grid(text)

    def test_parse_lists(self) -> None:
        """test that comma-separated lists parse and reject junk."""
        assert parse_floats("0.2, 0.1,0.05") == [0.2, 0.1, 0.05]
        assert parse_ints("0,1") == [0, 1]
        with pytest.raises(ValueError, match="invalid integer list"):
            parse_ints("0,one")


class TestCovCommand:
    """Tests for the cov command."""

    def test_reports_variance_and_torus(self, runner: CliRunner, tmp_path: Path) -> None:
        """test that cov prints K(0) and the torus and writes the table."""
        # when
        report = _invoke(
            runner,
            ["cov", "--n1", "30", "--n2", "40", "--J", "3", "--check", "--out", str(tmp_path / "t")],
        )

        # then
        assert report["J"] == 3
        assert report["torus"] == [90, 120]
        assert report["K0"] > 0
        assert report["delta_J"] >= 0
        assert Path(report["path"]).exists()


class TestLoglikCommand:
    """Tests for the loglik command."""

    def test_verify_against_dense(self, runner: CliRunner, data_file: Path) -> None:
        """test that --verify reports a negligible discrepancy."""
        # when
        report = _invoke(
            runner, ["loglik", "--data", str(data_file), "--kappa", "0.3", "--mu", "0.5", "--verify"]
        )

        # then
        assert report["method"] == "exact"
        assert report["n_obs"] == 33
        assert report["discrepancy"] < 1e-8

    def test_writes_run_record(self, runner: CliRunner, data_file: Path, tmp_path: Path) -> None:
        """test that --out stores the parameters and the breakdown."""
        # given
        out = tmp_path / "record.json"

        # when
        report = _invoke(
            runner,
            ["loglik", "--data", str(data_file), "--method", "indblocks", "--block-shape", "3x3",
             "--sigma2", "0.1", "--out", str(out)],
        )

        # then
        record = RunRecord.read(out)
        assert record.command == "loglik"
        assert record.params["method"] == "indblocks"
        assert record.results["loglik"] == report["loglik"]

    def test_inapplicable_method_exits_with_usage_code(
        self, runner: CliRunner, data_file: Path
    ) -> None:
        """test that an approximation with a nugget exits 2 with an error line."""
        # when
        result = runner.invoke(
            cli, ["loglik", "--data", str(data_file), "--method", "none", "--sigma2", "0.1"]
        )

        # then
        assert result.exit_code == 2
        assert "error:" in result.output

    def test_malformed_grid_exits_with_usage_code(self, runner: CliRunner, tmp_path: Path) -> None:
        """test that a malformed grid file exits 2."""
        # given
        bad = tmp_path / "bad.txt"
        bad.write_text("n1 2\nn2 2\nmissing NaN\n1 2\n")

        # when
        result = runner.invoke(cli, ["loglik", "--data", str(bad)])

        # then
        assert result.exit_code == 2
        assert "header says 2 rows" in result.output

    def test_verify_size_guard_exits_with_code_four(
        self, runner: CliRunner, tmp_path: Path
    ) -> None:
        """test that --verify refuses grids above the dense limit."""
        # given
        path = write_grid(tmp_path / "big.bin", np.zeros((65, 65)))

        # when
        result = runner.invoke(cli, ["loglik", "--data", str(path), "--kappa", "0.5", "--verify"])

        # then
        assert result.exit_code == 4
        assert "--verify needs n_obs <= 4096" in result.output

    def test_invalid_block_shape(self, runner: CliRunner, data_file: Path) -> None:
        """test that a malformed --block-shape is a usage error."""
        # when
        result = runner.invoke(cli, ["loglik", "--data", str(data_file), "--block-shape", "40"])

        # then
        assert result.exit_code == 2
        assert "invalid grid size" in result.output


class TestFitCommand:
    """Tests for the fit command."""

    def test_fit_two_smoothness_values(
        self, runner: CliRunner, data_file: Path, tmp_path: Path
    ) -> None:
        """test that fit reports both nu values with gaps and a reference."""
        # given
        out = tmp_path / "fit.json"

        # when
        report = _invoke(
            runner,
            ["fit", "--data", str(data_file), "--nu", "0", "--nu", "1", "--max-iter", "15",
             "--reference-loglik", "-60", "--out", str(out)],
        )

        # then
        assert set(report["fits"]) == {"0", "1"}
        best = report["fits"][str(report["best_nu"])]
        assert best["loglik_gap"] == 0.0
        assert best["dloglik"] == pytest.approx(best["loglik"] + 60.0)
        assert best["sigma"] == 0.0
        assert "trace" in RunRecord.read(out).results["fits"]["0"]

    def test_optimizer_settings_from_config_file(
        self, runner: CliRunner, data_file: Path, tmp_path: Path
    ) -> None:
        """test that an unknown optimizer key in --config exits 2."""
        # given
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"optimizer": {"tolerance": 1.0}}))

        # when
        result = runner.invoke(cli, ["--config", str(config), "fit", "--data", str(data_file)])

        # then
        assert result.exit_code == 2
        assert "unknown optimizer settings" in result.output


class TestSimulationCommands:
    """Tests for simulate, krige and condsim."""

    def test_simulate_numbered_and_reproducible(self, runner: CliRunner, tmp_path: Path) -> None:
        """test that --count writes numbered files and --seed fixes them."""
        # when
        first = _invoke(
            runner,
            ["simulate", "--n1", "5", "--n2", "7", "--count", "2", "--seed", "3",
             "--out", str(tmp_path / "a" / "sim.txt")],
        )
        second = _invoke(
            runner,
            ["simulate", "--n1", "5", "--n2", "7", "--count", "2", "--seed", "3",
             "--out", str(tmp_path / "b" / "sim.txt")],
        )

        # then
        assert [Path(p).name for p in first["paths"]] == ["sim_0.txt", "sim_1.txt"]
        for a, b in zip(first["paths"], second["paths"], strict=True):
            assert np.array_equal(read_grid(a), read_grid(b))
        assert read_grid(first["paths"][0]).shape == (5, 7)

    def test_simulate_without_seed_reports_a_repeatable_one(
        self, runner: CliRunner, tmp_path: Path
    ) -> None:
        """test that an omitted --seed is drawn, echoed and reproduces the field."""
        # when
        drawn = _invoke(
            runner, ["simulate", "--n1", "4", "--n2", "6", "--out", str(tmp_path / "a.txt")]
        )
        repeated = _invoke(
            runner,
            ["simulate", "--n1", "4", "--n2", "6", "--seed", str(drawn["seed"]),
             "--out", str(tmp_path / "b.txt")],
        )

        # then
        assert isinstance(drawn["seed"], int)
        assert repeated["seed"] == drawn["seed"]
        assert np.array_equal(read_grid(drawn["paths"][0]), read_grid(repeated["paths"][0]))

    def test_condsim_without_seed_reports_a_repeatable_one(
        self, runner: CliRunner, data_file: Path, tmp_path: Path
    ) -> None:
        """test that condsim echoes the drawn seed and reruns identically with it."""
        # when
        drawn = _invoke(
            runner, ["condsim", "--data", str(data_file), "--out", str(tmp_path / "a.txt")]
        )
        repeated = _invoke(
            runner,
            ["condsim", "--data", str(data_file), "--seed", str(drawn["seed"]),
             "--out", str(tmp_path / "b.txt")],
        )

        # then
        assert isinstance(drawn["seed"], int)
        assert np.array_equal(read_grid(drawn["paths"][0]), read_grid(repeated["paths"][0]))

    def test_simulate_applies_mask(self, runner: CliRunner, data_file: Path, tmp_path: Path) -> None:
        """test that --mask copies the missing cells of a grid file."""
        # when
        report = _invoke(
            runner,
            ["simulate", "--n1", "6", "--n2", "6", "--mask", str(data_file), "--seed", "1",
             "--out", str(tmp_path / "masked.txt")],
        )

        # then
        simulated = read_grid(report["paths"][0])
        assert np.array_equal(np.isnan(simulated), np.isnan(read_grid(data_file)))

    def test_krige_fills_missing_cells(
        self, runner: CliRunner, data_file: Path, tmp_path: Path
    ) -> None:
        """test that krige writes a complete grid and sds at the targets only."""
        # when
        report = _invoke(
            runner,
            ["krige", "--data", str(data_file), "--kappa", "0.3", "--mu", "0.5",
             "--out", str(tmp_path / "pred.txt"), "--sd-out", str(tmp_path / "sd.txt")],
        )

        # then
        original = read_grid(data_file)
        completed = read_grid(report["out"])
        sd = read_grid(report["sd_out"])
        assert report["targets"] == 3
        assert np.all(np.isfinite(completed))
        assert np.array_equal(completed[~np.isnan(original)], original[~np.isnan(original)])
        assert np.array_equal(np.isfinite(sd), np.isnan(original))
        assert np.all(sd[np.isfinite(sd)] > 0)

    def test_condsim_writes_each_draw(
        self, runner: CliRunner, data_file: Path, tmp_path: Path
    ) -> None:
        """test that condsim writes one completed grid per draw."""
        # when
        report = _invoke(
            runner,
            ["condsim", "--data", str(data_file), "--n-sims", "3", "--seed", "4",
             "--out", str(tmp_path / "draw.txt")],
        )

        # then
        assert len(report["paths"]) == 3
        draws = [read_grid(p) for p in report["paths"]]
        assert all(np.all(np.isfinite(d)) for d in draws)
        assert not np.array_equal(draws[0], draws[1])


class TestStudyCommands:
    """Tests for simstudy, benchmark and convergence."""

    def test_convergence_csv(self, runner: CliRunner, tmp_path: Path) -> None:
        """test that convergence writes one row per (nu, kappa, J)."""
        # given
        out = tmp_path / "conv.csv"

        # when
        result = runner.invoke(
            cli,
            ["convergence", "--nu", "0", "--kappa-list", "0.5,0.3", "--n1", "8", "--n2", "8",
             "--J-max", "3", "--out", str(out)],
        )

        # then
        assert result.exit_code == 0, result.output
        with out.open() as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 6
        assert json.loads(out.with_suffix(".json").read_text())["command"] == "convergence"

    def test_benchmark_reports_slope(self, runner: CliRunner, tmp_path: Path) -> None:
        """test that benchmark writes timings and echoes the growth exponent."""
        # when
        result = runner.invoke(
            cli,
            ["--threads", "1", "benchmark", "--sizes", "6,8", "--nu", "0", "--sigma2", "0",
             "--out", str(tmp_path / "bench.csv")],
        )

        # then
        assert result.exit_code == 0, result.output
        assert "nu=0: exact time ~ n^" in result.output

    def test_simstudy_summary(self, runner: CliRunner, tmp_path: Path) -> None:
        """test that simstudy writes replicate and summary rows."""
        # given
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"compute": {"workers": 1}, "optimizer": {"max_iter": 10}}))
        out = tmp_path / "study.csv"

        # when
        result = runner.invoke(
            cli,
            ["--config", str(config), "simstudy", "--kappa-list", "0.3", "--grid", "6x6",
             "--reps", "2", "--methods", "exact,none", "--out", str(out)],
        )

        # then
        assert result.exit_code == 0, result.output
        with out.open() as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 6
        assert sum(row["rep"] == "mean" for row in rows) == 2
        assert "kappa=0.3 exact" in result.output

    def test_simstudy_csv_is_reproducible(self, runner: CliRunner, tmp_path: Path) -> None:
        """test that a fixed seed writes byte-identical CSV files."""
        # given
        args = ["--threads", "1", "simstudy", "--kappa-list", "0.3", "--grid", "6x6",
                "--reps", "1", "--methods", "exact,precision", "--seed", "9"]

        # when
        outputs = []
        for name in ("first.csv", "second.csv"):
            result = runner.invoke(cli, [*args, "--out", str(tmp_path / name)])
            assert result.exit_code == 0, result.output
            outputs.append((tmp_path / name).read_bytes())

        # then
        assert outputs[0] == outputs[1]
        assert outputs[0].count(b"\n") == 5

    def test_simstudy_rejects_unknown_method(self, runner: CliRunner, tmp_path: Path) -> None:
        """test that unknown fit methods are a usage error."""
        # when
        result = runner.invoke(
            cli, ["simstudy", "--methods", "exact,magic", "--out", str(tmp_path / "s.csv")]
        )

        # then
        assert result.exit_code == 2
        assert "unknown methods" in result.output
