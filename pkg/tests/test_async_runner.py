"""Tests for the asynchronous experiment runner."""

import logging

import pytest

from cav.voi import scenarios
from cav.voi.async_runner import AsyncExperimentRunner
from cav.voi.exceptions import ConfigError, DivergenceError


def _diverge(config, report):
    raise DivergenceError("critic loss is nan", diagnostic={"step": 7})


class TestAsyncExperimentRunner:
    """Awaited runs with plain and coroutine callbacks."""

    @pytest.mark.asyncio
    async def test_blocking_run(self, small_config):
        async with AsyncExperimentRunner() as runner:
            run_id = await runner.run(small_config())
            assert runner.result(run_id).passed

    @pytest.mark.asyncio
    async def test_coroutine_callbacks(self, small_config):
        progress, results = [], []

        async def on_progress(data):
            progress.append(data.progress_percent)

        async def on_result(data):
            results.append(data)

        async with AsyncExperimentRunner() as runner:
            run_id = await runner.run(small_config(), result_callback=on_result,
                                      progress_callback=on_progress)
        assert progress[-1] == 100
        assert progress == sorted(progress)
        assert results[0].run_id == run_id
        assert results[0].result.passed

    @pytest.mark.asyncio
    async def test_non_blocking_runs_finish_on_exit(self, small_config):
        results = []
        async with AsyncExperimentRunner() as runner:
            run_id = await runner.run(small_config(), result_callback=results.append,
                                      blocking=False)
        assert [r.run_id for r in results] == [run_id]

    @pytest.mark.asyncio
    async def test_invalid_config(self, small_config):
        runner = AsyncExperimentRunner()
        with pytest.raises(ConfigError):
            await runner.run(small_config("tabular_properties", "seed=-3"))

    @pytest.mark.asyncio
    async def test_failure_reaches_callback(self, small_config, tmp_path):
        path = tmp_path / "short.csv"
        path.write_text("time_s,velocity_mps\n0.0,10.0\n0.1,10.0\n")
        results = []
        runner = AsyncExperimentRunner()
        await runner.run(small_config("custom", f"trajectory_path={path}"),
                         result_callback=results.append)
        assert results[0].error.code == "ValidationError"
        assert results[0].result is None

    @pytest.mark.asyncio
    async def test_background_failure_is_kept_and_logged(self, small_config, monkeypatch,
                                                         caplog):
        monkeypatch.setitem(scenarios.SCENARIOS, "tabular_properties", _diverge)
        caplog.set_level(logging.ERROR, logger="cav.voi.async_runner")
        async with AsyncExperimentRunner() as runner:
            run_id = await runner.run(small_config(), blocking=False)
        assert runner.result(run_id) is None
        assert isinstance(runner.error(run_id), DivergenceError)
        assert any(run_id in r.getMessage() for r in caplog.records)

    @pytest.mark.asyncio
    async def test_blocking_failure_raises_and_is_kept(self, small_config, monkeypatch):
        monkeypatch.setitem(scenarios.SCENARIOS, "tabular_properties", _diverge)
        runner = AsyncExperimentRunner()
        with pytest.raises(DivergenceError):
            await runner.run(small_config())
        assert len(runner._errors) == 1

    @pytest.mark.asyncio
    async def test_forget(self, small_config):
        runner = AsyncExperimentRunner()
        run_id = await runner.run(small_config())
        runner.forget(run_id)
        assert runner.result(run_id) is None
        assert runner.error(run_id) is None
