"""Tests for the cav-voi command line."""

import json
import os

from cav.voi.cli import main
from cav.voi.error_codes import EXIT_OK, EXIT_USAGE

FAST = [
    "--set", "tabular.n_instances=2",
    "--set", "tabular.max_states=6",
    "--set", "tabular.identity_states=6",
    "--set", "method_a.rollout_set_size=20",
    "--set", "method_a.rollouts_per_state=50",
    "--set", "method_a.horizon=60",
    "--set", "method_a.collection_episodes=1",
]


class TestValidate:
    """cav-voi validate."""

    def test_defaults(self, capsys):
        assert main(["validate"]) == EXIT_OK
        assert json.loads(capsys.readouterr().out) == {"valid": True, "violations": []}

    def test_violation_exit_code(self, capsys):
        assert main(["validate", "--set", "network.dt=0.02"]) == EXIT_USAGE
        report = json.loads(capsys.readouterr().out)
        assert report["valid"] is False
        assert any("network" in v for v in report["violations"])

    def test_unknown_key(self, capsys):
        assert main(["validate", "--set", "network.nope=1"]) == EXIT_USAGE
        assert "Invalid configuration" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["validate", "--config", str(tmp_path / "none.yaml")]) == EXIT_USAGE


class TestUsage:
    """Argument errors."""

    def test_bad_flag(self, capsys):
        assert main(["validate", "--bogus"]) == EXIT_USAGE
        assert "cav-voi" in capsys.readouterr().err

    def test_bad_scenario(self):
        assert main(["run", "--scenario", "case99"]) == EXIT_USAGE

    def test_bad_figure(self, tmp_path):
        assert main(["plotdata", "--out", str(tmp_path), "--figure", "fig6_style"]) == EXIT_USAGE


class TestRun:
    """cav-voi run and plotdata."""

    def test_run_tabular(self, tmp_path, capsys):
        out = str(tmp_path / "run")
        code = main(["run", "--scenario", "tabular_properties", "--seed", "3", "--out", out,
                     *FAST])
        assert code == EXIT_OK
        assert json.loads(capsys.readouterr().out) == {"out_dir": out, "passed": True}
        assert os.path.isfile(os.path.join(out, "summary.json"))

    def test_run_is_default_command(self, tmp_path):
        out = str(tmp_path / "default")
        assert main(["--log-level", "WARNING", "--out", out, *FAST]) == EXIT_OK
        assert os.path.isfile(os.path.join(out, "tabular_properties.csv"))

    def test_negative_seed(self, tmp_path):
        assert main(["run", "--seed", "-1", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_plotdata(self, tmp_path, capsys):
        assert main(["plotdata", "--out", str(tmp_path), "--figure", "fig5_style"]) == EXIT_OK
        path = capsys.readouterr().out.strip()
        assert path.endswith("plot_fig5_style.csv")
