#!/usr/bin/env python

"""Tests for `subexpq` package."""

import json

import pandas as pd
import pytest
import yaml
from click.testing import CliRunner

from subexpq import __version__, cli
from subexpq.modelfile import load_model

from .conftest import MODELS


@pytest.fixture
def runner():
    yield CliRunner()


@pytest.fixture
def invoke(runner, tmp_path):
    """
    Runs a subcommand on a shipped model, logging and reporting under tmp_path.
    """

    def run(command, model, *args):
        argv = [
            command,
            str(MODELS / model),
            "--log_file",
            str(tmp_path / "subexpq.log"),
            "--out",
            str(tmp_path / "reports"),
            *args,
        ]
        return runner.invoke(cli.main, argv)

    yield run


def read_summary(tmp_path):
    return json.loads((tmp_path / "reports" / "summary.json").read_text())


def test_version(runner):
    result = runner.invoke(cli.main, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_help(runner):
    result = runner.invoke(cli.main, ["--help"])
    assert result.exit_code == 0
    for command in ("validate", "stationary", "asymptote", "compare", "simulate"):
        assert command in result.output


def test_unknown_command(runner):
    result = runner.invoke(cli.main, ["frobnicate"])
    assert result.exit_code == 64


class TestValidate:
    def test_mm1(self, invoke, tmp_path):
        result = invoke("validate", "mm1.json")
        assert result.exit_code == 0
        summary = read_summary(tmp_path)
        assert summary["command"] == "validate"
        assert summary["sigma"] == pytest.approx(-0.5, abs=1e-8)
        assert summary["rho"] == pytest.approx(0.5)
        assert summary["mass_deficit"] == 0.0
        assert summary["options"]["levels"] == 50

    def test_unstable(self, invoke):
        result = invoke("validate", "unstable.json")
        assert result.exit_code == 2
        assert "sigma" in result.output

    def test_echo(self, invoke):
        result = invoke("validate", "mm1.json", "--echo")
        assert result.exit_code == 0
        assert json.loads(result.stdout) == load_model(MODELS / "mm1.json").document

    def test_missing_file(self, runner):
        result = runner.invoke(cli.main, ["validate", "no-such-model.json"])
        assert result.exit_code == 2

    def test_unwritable(self, invoke, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        result = invoke("validate", "mm1.json", "--out", str(blocker / "reports"))
        assert result.exit_code == 73


class TestStationary:
    def test_mm1(self, invoke, tmp_path):
        result = invoke("stationary", "mm1.json", "--levels", "20")
        assert result.exit_code == 0
        frame = pd.read_csv(tmp_path / "reports" / "stationary.csv")
        assert list(frame.columns) == ["level", "phase", "probability", "tail"]
        assert frame["level"].max() == 20
        first = frame[frame["level"] == 0].iloc[0]
        assert first["probability"] == pytest.approx(0.5, abs=1e-8)
        assert first["tail"] == pytest.approx(0.5, abs=1e-8)
        summary = read_summary(tmp_path)
        assert summary["mass_deficit"] == pytest.approx(0.5 ** 21, abs=1e-8)
        assert summary["method"] == "matrix-analytic"

    def test_plot_data(self, invoke, tmp_path):
        assert invoke("stationary", "mm1.json", "--levels", "10").exit_code == 0
        lines = (tmp_path / "reports" / "stationary.dat").read_text().splitlines()
        assert len(lines) == 11
        assert all(len(line.split()) == 2 for line in lines)

    def test_json_format(self, invoke, tmp_path):
        assert invoke("stationary", "mm1.json", "--levels", "10", "--format", "json").exit_code == 0
        table = json.loads((tmp_path / "reports" / "stationary.json").read_text())
        assert table["probability"][0] == pytest.approx(0.5, abs=1e-8)

    def test_bulk_epochs(self, invoke, tmp_path):
        assert invoke("stationary", "map-m-2-5.json", "--levels", "20").exit_code == 0
        frame = pd.read_csv(tmp_path / "reports" / "stationary.csv")
        assert set(frame["epoch"]) == {"time", "departure"}
        for _, rows in frame.groupby("epoch"):
            beyond = rows[rows["level"] == 20]["tail"].iloc[0]
            assert rows["probability"].sum() + beyond == pytest.approx(1.0, abs=1e-7)
        assert read_summary(tmp_path)["eta"] > 2.0

    def test_config_file(self, invoke, tmp_path):
        config = tmp_path / "config.yml"
        config.write_text(yaml.safe_dump({"levels": 12, "format": "csv"}))
        assert invoke("stationary", "mm1.json", "-c", str(config)).exit_code == 0
        assert pd.read_csv(tmp_path / "reports" / "stationary.csv")["level"].max() == 12
        assert invoke("stationary", "mm1.json", "-c", str(config), "--levels", "7").exit_code == 0
        assert pd.read_csv(tmp_path / "reports" / "stationary.csv")["level"].max() == 7


class TestAsymptote:
    def test_gig1(self, invoke, tmp_path):
        result = invoke("asymptote", "gig1-pareto.json", "--levels", "300", "--window", "30", "300")
        assert result.exit_code == 0
        header = (tmp_path / "reports" / "asymptote.csv").read_text().splitlines()[0]
        assert header == "k,true_tail,predicted_tail,ratio"
        summary = read_summary(tmp_path)
        assert "mass_deficit" in summary
        assert summary["ratio_tol"] == 0.15
        assert summary["options"]["window"] == [30, 300]
        lines = (tmp_path / "reports" / "asymptote.dat").read_text().splitlines()
        assert all(len(line.split()) == 2 for line in lines)

    def test_light_tailed_queue(self, invoke):
        result = invoke("asymptote", "mm1.json", "--regime", "service-dominant")
        assert result.exit_code == 2
        assert "light-tailed" in result.output

    def test_finite_chain(self, invoke):
        result = invoke("asymptote", "unstable.json")
        assert result.exit_code == 2


class TestCompare:
    def test_gig1_has_no_simulation(self, invoke, tmp_path):
        result = invoke("compare", "gig1-pareto.json", "--levels", "50")
        assert result.exit_code == 0
        frame = pd.read_csv(tmp_path / "reports" / "compare.csv")
        assert list(frame.columns) == ["k", "stationary", "truncated", "simulated", "simulated_stderr"]
        assert frame["simulated"].isna().all()
        assert read_summary(tmp_path)["flags"]

    def test_mm1(self, invoke, tmp_path):
        result = invoke("compare", "mm1.json", "--levels", "10", "--replications", "2")
        assert result.exit_code == 0
        frame = pd.read_csv(tmp_path / "reports" / "compare.csv")
        assert len(frame) == 11
        assert (frame["stationary"] - frame["truncated"]).abs().max() < 1e-8
        assert (frame["stationary"] - frame["simulated"]).abs().max() < 0.03

    def test_batch_arrivals_match_time_average(self, invoke, tmp_path):
        result = invoke("compare", "mx-m-1-pareto-batch.json", "--levels", "5", "--replications", "20")
        assert result.exit_code == 0
        summary = read_summary(tmp_path)
        assert summary["cells_outside_3_sigma"] == 0
        assert summary["violations"] == 0

    def test_bulk(self, invoke, tmp_path):
        result = invoke("compare", "map-m-2-5.json", "--levels", "10", "--replications", "2")
        assert result.exit_code == 0
        frame = pd.read_csv(tmp_path / "reports" / "compare.csv")
        assert {"time_stationary", "time_simulated", "time_simulated_stderr"} <= set(frame.columns)
        assert len(frame) == 11


class TestSimulate:
    def test_mm1(self, invoke, tmp_path):
        result = invoke("simulate", "mm1.json", "--replications", "2", "--seed", "5")
        assert result.exit_code == 0
        frame = pd.read_csv(tmp_path / "reports" / "simulate.csv")
        assert frame["time_probability"].sum() == pytest.approx(1.0)
        summary = read_summary(tmp_path)
        assert summary["violations"] == 0
        assert summary["eta"] == pytest.approx(2.0, rel=0.05)

    def test_chain_cannot_be_simulated(self, invoke):
        assert invoke("simulate", "gig1-pareto.json").exit_code == 2

    def test_small_budget(self, invoke):
        result = invoke("simulate", "mm1.json", "--events", "1000")
        assert result.exit_code == 2
        assert "event budget" in result.output
