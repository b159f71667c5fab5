"""End-to-end CLI runs: exit codes, manifests, determinism of outputs."""

import json

import pytest
from click.testing import CliRunner

from psfunmix.cli import main

QUICK_TOML = """\
[grid]
T = 4.0
N = 401

[model]
theta_star = [0.2, 0.1]
counts = [2, 2]

[experiment]
Delta_list = [0.5]
trials = 3
distance_bins = 3
distance_min = 1e-3
distance_max = 0.3
seed = 11
landscape_resolution = 5

[certificate]
lipschitz_samples = 2
"""

PROBLEM_TOML = """\
[grid]
T = 4.0
N = 401

[support]
locations = [[0.0, 1.0], [0.5]]

[params]
theta = [0.2, 0.1]
eta = [1.0, 0.8, 0.5]
"""

LINES_CSV = """\
species,ion,wavelength_nm,strength
Fe,I,396.0,0.5
Fe,I,402.0,1.0
Mg,II,399.5,0.8
"""


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def quick_config(tmp_path):
    path = tmp_path / "quick.toml"
    path.write_text(QUICK_TOML)
    return str(path)


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


class TestCertify:
    def test_writes_certificate_and_manifest(self, runner, quick_config, tmp_path):
        out = tmp_path / "cert"
        result = runner.invoke(main, ["certify", "--config", quick_config,
                                      "--out", str(out)])
        assert result.exit_code == 0, result.output
        cert = read_json(out / "certificate.json")
        assert set(cert) >= {"c_minus", "c_plus", "r_star", "q_star",
                             "feasible", "epsilon_0"}
        manifest = read_json(out / "manifest.json")
        assert manifest["config_sha256"]
        assert manifest["versions"]["psfunmix"]
        assert manifest["Delta"] == 0.5

    def test_require_feasible_exit_code(self, runner, quick_config, tmp_path):
        result = runner.invoke(main, ["certify", "--config", quick_config,
                                      "--out", str(tmp_path / "c2"),
                                      "--require-feasible"])
        assert result.exit_code == 2

    def test_missing_config_is_usage_error(self, runner, tmp_path):
        result = runner.invoke(main, ["certify", "--config",
                                      str(tmp_path / "nope.toml")])
        assert result.exit_code != 0

    def test_invalid_toml_exit_code(self, runner, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[grid\nT = ")
        result = runner.invoke(main, ["certify", "--config", str(bad),
                                      "--out", str(tmp_path / "o")])
        assert result.exit_code == 1


class TestSolve:
    def test_solves_explicit_problem(self, runner, tmp_path):
        cfg = tmp_path / "problem.toml"
        cfg.write_text(PROBLEM_TOML)
        out = tmp_path / "solve"
        result = runner.invoke(main, ["solve", "--config", str(cfg),
                                      "--out", str(out), "--init-scale", "1.2"])
        assert result.exit_code == 0, result.output
        summary = read_json(out / "solve.json")
        assert summary["converged"]
        assert summary["theta_error"] < 1e-6
        trace = (out / "trace.csv").read_text().splitlines()
        assert trace[0] == "iter,loss"
        assert len(trace) >= 2


class TestMonteCarlo:
    def test_rerun_is_bit_identical(self, runner, quick_config, tmp_path):
        outs = []
        for name in ("mc1", "mc2"):
            out = tmp_path / name
            result = runner.invoke(main, ["montecarlo", "--config", quick_config,
                                          "--out", str(out)])
            assert result.exit_code == 0, result.output
            outs.append((out / "success_curve.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_seed_override_changes_curve_header_only(self, runner, quick_config,
                                                     tmp_path):
        out = tmp_path / "mc3"
        result = runner.invoke(main, ["montecarlo", "--config", quick_config,
                                      "--out", str(out), "--seed", "99"])
        assert result.exit_code == 0, result.output
        assert read_json(out / "manifest.json")["seed"] == 99


class TestMetricsAndLandscape:
    def test_metrics_tables(self, runner, quick_config, tmp_path):
        out = tmp_path / "metrics"
        result = runner.invoke(main, ["metrics", "--config", quick_config,
                                      "--out", str(out)])
        assert result.exit_code == 0, result.output
        coh = (out / "coherence.csv").read_text().splitlines()
        intf = (out / "interference.csv").read_text().splitlines()
        assert coh[0] == "a,b,i,j,Delta,mu,C"
        assert intf[0] == "a,i,Delta,I"
        assert len(intf) == 1 + 2 * 3

    def test_landscape_csv(self, runner, quick_config, tmp_path):
        out = tmp_path / "land"
        result = runner.invoke(main, ["landscape", "--config", quick_config,
                                      "--out", str(out)])
        assert result.exit_code == 0, result.output
        rows = (out / "landscape.csv").read_text().splitlines()
        assert rows[0] == "theta1,theta2,loss"
        assert len(rows) == 1 + 5 * 5
        assert (out / "landscape.plotspec").exists()


class TestLibsPipeline:
    def test_synth_then_fit(self, runner, tmp_path):
        lines = tmp_path / "lines.csv"
        lines.write_text(LINES_CSV)
        synth_out = tmp_path / "synth"
        result = runner.invoke(main, [
            "synth", "--lines", str(lines), "--out", str(synth_out),
            "--seed", "3", "--theta", "0.05,0.08", "--nu", "1.0,0.2",
            "--samples", "2001",
        ])
        assert result.exit_code == 0, result.output
        truth = read_json(synth_out / "truth.json")
        assert truth["nu"] == [1.0, 0.2]

        fit_out = tmp_path / "fit"
        result = runner.invoke(main, [
            "libs-fit", "--spectrum", str(synth_out / "spectrum.csv"),
            "--lines", str(lines), "--out", str(fit_out),
        ])
        assert result.exit_code == 0, result.output
        fit = read_json(fit_out / "fit.json")
        assert fit["modalities"] == ["Fe I", "Mg II"]
        assert fit["relative_fit_error"] < 0.1
        nu_hat = fit["nu_hat"]
        assert nu_hat[0] == pytest.approx(1.0, rel=0.05)
        assert nu_hat[1] == pytest.approx(0.2, rel=0.10)

    def test_synth_wrong_arity_exit_code(self, runner, tmp_path):
        lines = tmp_path / "lines.csv"
        lines.write_text(LINES_CSV)
        result = runner.invoke(main, ["synth", "--lines", str(lines),
                                      "--out", str(tmp_path / "s2"),
                                      "--theta", "0.05"])
        assert result.exit_code == 1
