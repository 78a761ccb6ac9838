"""Callback data structures."""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional


@dataclass
class RunProgress:
    """Data passed to progress callback."""

    run_id: str
    progress_percent: int
    stage: str


@dataclass
class RunResult:
    """Run result data."""

    out_dir: str
    artifacts: List[str]
    summary: Dict[str, Any]
    passed: bool = True
    exit_code: int = 0


@dataclass
class RunError:
    """Run error data."""

    code: str
    message: str
    module: Optional[str] = None


@dataclass
class ResultCallbackData:
    """Data passed to result callback."""

    run_id: str
    result: Optional[RunResult] = None
    error: Optional[RunError] = None


@dataclass
class ScenarioOutput:
    """What a scenario hands back to the runner before anything is written.

    Attributes:
        summary: JSON-serializable run summary
        frames: Artifact file name -> table
        records: VoI measurements for the VoiRecord CSV
        passed: Whether the scenario's acceptance checks held
        plot_figure: Plot bundle to emit after the artifacts, if any
    """

    summary: Dict[str, Any]
    frames: Dict[str, Any] = field(default_factory=dict)
    records: List[Any] = field(default_factory=list)
    passed: bool = True
    plot_figure: Optional[str] = None
