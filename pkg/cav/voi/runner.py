"""Synchronous experiment runner."""

import itertools
import json
import logging
import os
import threading
import time
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from cav.voi import config as config_io
from cav.voi.data.callback import (
    ResultCallbackData,
    RunError,
    RunProgress,
    RunResult,
    ScenarioOutput,
)
from cav.voi.data.params import ExperimentConfig
from cav.voi.data.records import write_records
from cav.voi.error_codes import EXIT_ACCEPTANCE_FAILURE, EXIT_OK, format_error_message, module_tag
from cav.voi.exceptions import RunTimeoutError, ValidationError
from cav.voi.scenarios import SCENARIOS, emit_plotdata
from cav.voi.utils import ensure_dir, write_frame

logger = logging.getLogger(__name__)

SUMMARY_NAME = "summary.json"
RECORDS_NAME = "voi_records.csv"

# Artifact writes of concurrent runs never interleave
_WRITE_LOCK = threading.Lock()

_RUN_COUNTER = itertools.count(1)


def new_run_id(config: ExperimentConfig) -> str:
    """Process-unique run ID of the form <scenario>-<seed>-<n>."""
    return f"{config.scenario}-{config.seed}-{next(_RUN_COUNTER)}"


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_summary(summary: Dict, path: str) -> str:
    """Write a summary as indented JSON with a trailing newline."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(summary, f, indent=2, allow_nan=True, default=_json_default)
        f.write("\n")
    return path


class ExperimentRunner:
    """Runs experiment scenarios and writes their artifacts.

    Example:
        runner = ExperimentRunner()
        config = ExperimentConfig(scenario="tabular_properties", out_dir="runs/tab")

        def on_result(data):
            if data.result:
                print(f"Run finished: {data.result.summary['passed']}")
            elif data.error:
                print(f"Run failed: {data.error.message}")

        run_id = runner.run(config, result_callback=on_result)
    """

    def __init__(self) -> None:
        self._results: Dict[str, RunResult] = {}
        self._errors: Dict[str, BaseException] = {}
        self._done: Dict[str, threading.Event] = {}

    # ==================== Running ====================

    def run(
            self,
            config: ExperimentConfig,
            result_callback: Optional[Callable[[ResultCallbackData], None]] = None,
            progress_callback: Optional[Callable[[RunProgress], None]] = None,
            blocking: bool = True,
            timeout: Optional[float] = None,
    ) -> str:
        """Validate a config and run its scenario.

        Without callbacks, progress and the outcome are logged at INFO.

        Args:
            config: Experiment configuration
            result_callback: Callback for run completion (success or failure)
            progress_callback: Callback for progress updates
            blocking: Whether to block until the run completes (default: True)
            timeout: Maximum wait in seconds when blocking

        Returns:
            Run ID

        Raises:
            ConfigError: If the config is invalid
            RunTimeoutError: If a blocking run exceeds timeout; the run keeps going in the
                background and can still be awaited with wait()
        """
        config_io.check(config)
        run_id = new_run_id(config)
        self._done[run_id] = threading.Event()
        thread = threading.Thread(
            target=self._run_job,
            args=(run_id, config.copy()),
            kwargs={
                "result_callback": result_callback,
                "progress_callback": progress_callback,
            },
            daemon=True,
        )
        thread.start()
        if blocking:
            if not self._done[run_id].wait(timeout):
                raise RunTimeoutError(f"Run timed out after {timeout} seconds", run_id=run_id)
            # With a result callback the error went to the callback
            if result_callback is None and run_id in self._errors:
                raise self._errors[run_id]
        return run_id

    def execute(
            self,
            config: ExperimentConfig,
            progress_callback: Optional[Callable[[RunProgress], None]] = None,
            run_id: Optional[str] = None,
    ) -> RunResult:
        """Run a scenario in the calling thread and write its artifacts.

        Returns:
            RunResult listing the written files

        Raises:
            ConfigError: If the config is invalid
            VoIError: Any module error, unchanged
        """
        config_io.check(config)
        run_id = run_id or f"{config.scenario}-{config.seed}"
        scenario = SCENARIOS[config.scenario]
        ensure_dir(config.out_dir)

        def report(percent: int, stage: str) -> None:
            if progress_callback:
                progress_callback(RunProgress(run_id=run_id, progress_percent=percent,
                                              stage=stage))
            else:
                logger.info("%s: %d%% %s", run_id, percent, stage)

        start = time.monotonic()
        output = scenario(config, report)
        report(95, "writing artifacts")
        artifacts = self._write(config, output)
        report(100, "done")
        logger.info("%s finished in %.1f s: %s", run_id, time.monotonic() - start,
                    "pass" if output.passed else "FAIL")
        return RunResult(
            out_dir=config.out_dir,
            artifacts=artifacts,
            summary=output.summary,
            passed=output.passed,
            exit_code=EXIT_OK if output.passed else EXIT_ACCEPTANCE_FAILURE,
        )

    def _write(self, config: ExperimentConfig, output: ScenarioOutput) -> List[str]:
        out = config.out_dir
        with _WRITE_LOCK:
            written = [config_io.write_effective_config(config, out)]
            for name in sorted(output.frames):
                written.append(write_frame(output.frames[name], os.path.join(out, name)))
            written.append(write_records(output.records, os.path.join(out, RECORDS_NAME)))
            written.append(write_summary(output.summary, os.path.join(out, SUMMARY_NAME)))
            if output.plot_figure:
                written.append(emit_plotdata(out, output.plot_figure))
        return written

    def _run_job(
            self,
            run_id: str,
            config: ExperimentConfig,
            result_callback: Optional[Callable[[ResultCallbackData], None]] = None,
            progress_callback: Optional[Callable[[RunProgress], None]] = None,
    ) -> None:
        result_data = None
        error_data = None
        try:
            result_data = self.execute(config, progress_callback, run_id=run_id)
            self._results[run_id] = result_data
        except Exception as e:
            self._errors[run_id] = e
            module = getattr(e, "module", None)
            error_data = RunError(code=type(e).__name__, message=format_error_message(e),
                                  module=module_tag(module) if module else None)

        try:
            if result_callback:
                result_callback(ResultCallbackData(run_id=run_id, result=result_data,
                                                   error=error_data))
            elif error_data:
                logger.error("%s failed: %s", run_id, error_data.message)
            else:
                logger.info("%s completed, artifacts in %s", run_id, config.out_dir)
        finally:
            self._done[run_id].set()

    # ==================== Results ====================

    def wait(self, run_id: str, timeout: Optional[float] = None) -> RunResult:
        """Block until a run finishes.

        Raises:
            RunTimeoutError: If the run is still going after timeout seconds
            VoIError: The error the run failed with
            KeyError: If run_id is unknown
        """
        if not self._done[run_id].wait(timeout):
            raise RunTimeoutError(f"Run timed out after {timeout} seconds", run_id=run_id)
        if run_id in self._errors:
            raise self._errors[run_id]
        return self._results[run_id]

    def result(self, run_id: str) -> Optional[RunResult]:
        """Result of a finished run, None while it is running or when it failed."""
        return self._results.get(run_id)

    def error(self, run_id: str) -> Optional[BaseException]:
        return self._errors.get(run_id)

    def is_done(self, run_id: str) -> bool:
        return self._done[run_id].is_set()

    def forget(self, run_id: str) -> None:
        """Drop the stored outcome of a finished run.

        Raises:
            ValidationError: If the run is still going
            KeyError: If run_id is unknown
        """
        if not self._done[run_id].is_set():
            raise ValidationError(f"Run {run_id} is still running")
        del self._done[run_id]
        self._results.pop(run_id, None)
        self._errors.pop(run_id, None)
