"""Tests for the synchronous experiment runner."""

import json
import os

import pytest

from cav.voi import scenarios
from cav.voi.error_codes import EXIT_OK
from cav.voi.exceptions import ConfigError, DivergenceError, ValidationError
from cav.voi.runner import RECORDS_NAME, SUMMARY_NAME, ExperimentRunner


def _short_trace(tmp_path):
    path = tmp_path / "short.csv"
    path.write_text("time_s,velocity_mps\n0.0,10.0\n0.1,10.0\n0.2,10.0\n")
    return str(path)


class TestExperimentRunner:
    """Running scenarios and writing their artifacts."""

    def test_execute_writes_artifacts(self, small_config):
        config = small_config()
        result = ExperimentRunner().execute(config)
        assert result.passed
        assert result.exit_code == EXIT_OK
        names = {os.path.basename(p) for p in result.artifacts}
        assert {"config.yaml", "tabular_properties.csv", RECORDS_NAME, SUMMARY_NAME} <= names
        with open(os.path.join(config.out_dir, SUMMARY_NAME), encoding="utf-8") as f:
            assert json.load(f)["passed"] is True

    def test_artifacts_are_deterministic(self, small_config, tmp_path):
        first = small_config("tabular_properties", f"out_dir={tmp_path / 'a'}")
        second = small_config("tabular_properties", f"out_dir={tmp_path / 'b'}")
        runner = ExperimentRunner()
        runner.execute(first)
        runner.execute(second)
        for name in ("tabular_properties.csv", RECORDS_NAME, SUMMARY_NAME):
            with open(os.path.join(first.out_dir, name), "rb") as a, \
                    open(os.path.join(second.out_dir, name), "rb") as b:
                assert a.read() == b.read(), name

    def test_callbacks(self, small_config):
        progress, results = [], []
        runner = ExperimentRunner()
        run_id = runner.run(small_config(), result_callback=results.append,
                            progress_callback=progress.append)
        assert results[0].run_id == run_id
        assert results[0].error is None
        assert results[0].result.passed
        assert progress[-1].progress_percent == 100
        assert runner.is_done(run_id)

    def test_non_blocking_wait(self, small_config):
        runner = ExperimentRunner()
        run_id = runner.run(small_config(), blocking=False)
        result = runner.wait(run_id, timeout=120)
        assert runner.result(run_id) is result
        assert runner.error(run_id) is None

    def test_invalid_config_is_rejected_before_running(self, small_config):
        with pytest.raises(ConfigError):
            ExperimentRunner().run(small_config("tabular_properties", "episodes=1"))

    def test_failure_reaches_callback(self, small_config, tmp_path):
        results = []
        config = small_config("custom", f"trajectory_path={_short_trace(tmp_path)}")
        ExperimentRunner().run(config, result_callback=results.append)
        error = results[0].error
        assert results[0].result is None
        assert error.code == "ValidationError"
        assert "Invalid input" in error.message

    def test_failure_raises_without_callback(self, small_config, tmp_path):
        runner = ExperimentRunner()
        config = small_config("custom", f"trajectory_path={_short_trace(tmp_path)}")
        with pytest.raises(ValidationError):
            runner.run(config)

    def test_background_failure_is_kept(self, small_config, monkeypatch):
        def diverge(config, report):
            raise DivergenceError("actor loss is nan")

        monkeypatch.setitem(scenarios.SCENARIOS, "tabular_properties", diverge)
        runner = ExperimentRunner()
        run_id = runner.run(small_config(), blocking=False)
        with pytest.raises(DivergenceError):
            runner.wait(run_id, timeout=60)
        assert isinstance(runner.error(run_id), DivergenceError)

    def test_forget_drops_finished_runs(self, small_config):
        runner = ExperimentRunner()
        run_id = runner.run(small_config())
        runner.forget(run_id)
        assert runner.result(run_id) is None
        with pytest.raises(KeyError):
            runner.is_done(run_id)
