"""Asynchronous experiment runner."""

import asyncio
import functools
import logging
from typing import Any, Awaitable, Callable, Dict, List, Optional, Set

from cav.voi import config as config_io
from cav.voi.data.callback import ResultCallbackData, RunError, RunProgress, RunResult
from cav.voi.data.params import ExperimentConfig
from cav.voi.error_codes import format_error_message, module_tag
from cav.voi.exceptions import RunTimeoutError
from cav.voi.runner import ExperimentRunner, new_run_id

logger = logging.getLogger(__name__)

ResultCallback = Callable[[ResultCallbackData], Optional[Awaitable[None]]]
ProgressCallback = Callable[[RunProgress], Optional[Awaitable[None]]]


async def _call(callback: Callable[[Any], Any], data: Any) -> None:
    if asyncio.iscoroutinefunction(callback):
        await callback(data)
    else:
        callback(data)


class AsyncExperimentRunner:
    """Asynchronous experiment runner.

    It mirrors ExperimentRunner but is awaited; the numeric work runs in the loop's
    default thread executor. Callbacks may be plain functions or coroutine functions.

    Example:
        async with AsyncExperimentRunner() as runner:
            config = ExperimentConfig(scenario="case11_comm", seed=3, out_dir="runs/c11")

            async def on_progress(data):
                print(f"Progress: {data.progress_percent}% {data.stage}")

            run_id = await runner.run(config, progress_callback=on_progress)
            print(runner.result(run_id).summary["checks"])
    """

    def __init__(self, runner: Optional[ExperimentRunner] = None):
        self._runner = runner or ExperimentRunner()
        self._results: Dict[str, RunResult] = {}
        self._errors: Dict[str, BaseException] = {}
        self._tasks: Set["asyncio.Task[None]"] = set()

    async def __aenter__(self) -> "AsyncExperimentRunner":
        return self

    async def __aexit__(self, exc_type: Any, exc_val: Any, exc_tb: Any) -> None:
        await self.close()

    async def close(self) -> None:
        """Wait for runs started with blocking=False."""
        if self._tasks:
            await asyncio.gather(*list(self._tasks), return_exceptions=True)

    async def run(
            self,
            config: ExperimentConfig,
            result_callback: Optional[ResultCallback] = None,
            progress_callback: Optional[ProgressCallback] = None,
            blocking: bool = True,
            timeout: Optional[float] = None,
    ) -> str:
        """Validate a config and run its scenario.

        Args:
            config: Experiment configuration
            result_callback: Callback for run completion (success or failure)
            progress_callback: Callback for progress updates
            blocking: Whether to await the run (default: True); otherwise it becomes a
                task finished by close() or the end of the async with block
            timeout: Maximum run time in seconds. A timed-out run is only abandoned by
                the loop: its executor thread keeps going and still writes artifacts

        Returns:
            Run ID

        Raises:
            ConfigError: If the config is invalid
            RunTimeoutError: If an awaited run without result_callback exceeds timeout

        A background run without result_callback that fails is logged at ERROR and its
        exception is kept for error().
        """
        config_io.check(config)
        run_id = new_run_id(config)
        job = self._run_job(run_id, config.copy(), result_callback, progress_callback, timeout,
                            reraise=blocking)
        if blocking:
            await job
        else:
            task = asyncio.create_task(job)
            self._tasks.add(task)
            task.add_done_callback(self._tasks.discard)
        return run_id

    async def _run_job(
            self,
            run_id: str,
            config: ExperimentConfig,
            result_callback: Optional[ResultCallback],
            progress_callback: Optional[ProgressCallback],
            timeout: Optional[float],
            reraise: bool = True,
    ) -> None:
        loop = asyncio.get_running_loop()
        pending: List["asyncio.Future[None]"] = []

        def dispatch(data: RunProgress) -> None:
            pending.append(asyncio.ensure_future(_call(progress_callback, data)))

        def bridge(data: RunProgress) -> None:
            # Called from the executor thread
            loop.call_soon_threadsafe(dispatch, data)

        work = loop.run_in_executor(
            None,
            functools.partial(self._runner.execute, config,
                              bridge if progress_callback else None, run_id),
        )
        result_data = None
        error_data = None
        try:
            result_data = await asyncio.wait_for(work, timeout)
            self._results[run_id] = result_data
        except asyncio.TimeoutError:
            error = RunTimeoutError(f"Run timed out after {timeout} seconds", run_id=run_id)
            self._errors[run_id] = error
            if not result_callback:
                self._fail(run_id, error, reraise)
                return
            error_data = RunError(code=type(error).__name__, message=format_error_message(error))
        except Exception as e:
            self._errors[run_id] = e
            if not result_callback:
                self._fail(run_id, e, reraise)
                return
            module = getattr(e, "module", None)
            error_data = RunError(code=type(e).__name__, message=format_error_message(e),
                                  module=module_tag(module) if module else None)

        # Let queued progress updates reach the loop before the result is reported
        await asyncio.sleep(0)
        if pending:
            await asyncio.gather(*pending)
        if result_callback:
            await _call(result_callback, ResultCallbackData(run_id=run_id, result=result_data,
                                                            error=error_data))
        else:
            logger.info("%s completed, artifacts in %s", run_id, config.out_dir)

    @staticmethod
    def _fail(run_id: str, error: BaseException, reraise: bool) -> None:
        if reraise:
            raise error
        # Background task without a result callback
        logger.error("%s failed: %s", run_id, format_error_message(error))

    def result(self, run_id: str) -> Optional[RunResult]:
        """Result of a finished run, None while running or after a failure."""
        return self._results.get(run_id)

    def error(self, run_id: str) -> Optional[BaseException]:
        return self._errors.get(run_id)

    def forget(self, run_id: str) -> None:
        """Drop the stored outcome of a run."""
        self._results.pop(run_id, None)
        self._errors.pop(run_id, None)
