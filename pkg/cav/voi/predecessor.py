"""Predecessor trajectory sources: synthetic stop-and-go profiles and CSV ingestion."""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
import pandas as pd

from cav.voi.data.enums import TrajectorySource
from cav.voi.data.params import StopAndGoConfig
from cav.voi.exceptions import ValidationError
from cav.voi.ssdp import ExoProcess
from cav.voi.utils import make_rng, write_frame

logger = logging.getLogger(__name__)

DEFAULT_COLUMNS = {"time_s": "time_s", "velocity_mps": "velocity_mps"}


@dataclass
class PredecessorTrajectory:
    """Predecessor acceleration series sampled at interval T.

    Attributes:
        acc: Acceleration per control interval (m/s^2)
        T: Sampling interval (s)
        source: Synthetic or file
        v0: Velocity at the first sample (m/s)
        clip_count: Samples clipped to the acceleration bound during ingestion
    """

    acc: np.ndarray
    T: float
    source: TrajectorySource = TrajectorySource.SYNTHETIC
    v0: float = 0.0
    clip_count: int = 0

    def __post_init__(self) -> None:
        self.acc = np.asarray(self.acc, dtype=float).ravel()
        if not np.all(np.isfinite(self.acc)):
            raise ValidationError("predecessor trajectory has non-finite samples")

    def __len__(self) -> int:
        return int(self.acc.shape[0])

    def velocity(self) -> np.ndarray:
        """Velocity at each sample boundary (one more entry than acc)."""
        return self.v0 + self.T * np.concatenate([[0.0], np.cumsum(self.acc)])

    def as_exo_process(self, loop: bool = False) -> ExoProcess:
        """Replay the acceleration series as exogenous information."""
        return ExoProcess.from_trace(self.acc, loop=loop)

    def to_frame(self) -> pd.DataFrame:
        v = self.velocity()
        return pd.DataFrame({"k": np.arange(len(self)), "acc_pred": self.acc, "v_pred": v[:-1]})

    def to_csv(self, path: str) -> str:
        return write_frame(self.to_frame(), path)


def synth_stop_and_go(
    duration: int,
    config: Optional[StopAndGoConfig] = None,
    T: float = 0.1,
    seed: int = 0,
) -> PredecessorTrajectory:
    """Generate a piecewise-constant stop-and-go acceleration profile.

    Phases cycle accelerate, cruise, brake, cruise. Magnitudes and dwell times are drawn
    uniformly per phase from the config ranges. A brake phase that would drive the
    velocity negative is cut so the vehicle stops exactly and then stands still.

    Args:
        duration: Number of control intervals
        config: Phase magnitudes and dwell ranges
        T: Control interval (s)
        seed: Random seed

    Returns:
        PredecessorTrajectory of length duration
    """
    config = config or StopAndGoConfig()
    config.validate()
    rng = make_rng(seed)
    acc = np.zeros(duration)
    v = config.v0
    k = 0
    phase = 0
    while k < duration:
        kind = ("accel", "cruise", "brake", "cruise")[phase % 4]
        dwell_range = config.cruise_dwell if kind == "cruise" else getattr(config, f"{kind}_dwell")
        steps = max(1, int(round(rng.uniform(*dwell_range) / T)))
        if kind == "accel":
            a = rng.uniform(*config.accel_magnitude)
        elif kind == "brake":
            a = -rng.uniform(*config.brake_magnitude)
        else:
            a = 0.0
        for _ in range(steps):
            if k >= duration:
                break
            step_acc = a
            if v + step_acc * T < 0.0:
                step_acc = -v / T
            acc[k] = step_acc
            v = max(0.0, v + step_acc * T)
            k += 1
        phase += 1
    logger.debug("stop-and-go trace: %d steps, seed=%d", duration, seed)
    return PredecessorTrajectory(acc=acc, T=T, source=TrajectorySource.SYNTHETIC, v0=config.v0)


def load_trajectory(
    path: str,
    column_map: Optional[Dict[str, str]] = None,
    target_T: float = 0.1,
    acc_max: float = 3.0,
    time_scale: float = 1.0,
) -> PredecessorTrajectory:
    """Load a velocity trace from CSV and convert it to accelerations.

    The velocity is resampled onto a uniform grid of step target_T by linear
    interpolation and differentiated; accelerations beyond acc_max are clipped.

    Args:
        path: CSV file
        column_map: Maps "time_s" and "velocity_mps" to the file's column names
        target_T: Output sampling interval (s)
        acc_max: Acceleration clip bound (m/s^2)
        time_scale: Factor converting the time column to seconds (e.g. 1e-3 for ms)

    Returns:
        PredecessorTrajectory with clip_count set

    Raises:
        ValidationError: If the file is empty, columns are missing, time is not strictly
            increasing or fewer than two resampled points remain
    """
    columns = dict(DEFAULT_COLUMNS)
    columns.update(column_map or {})
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError as e:
        raise ValidationError(f"Trajectory file is empty: {path}") from e
    except OSError as e:
        raise ValidationError(f"Cannot read trajectory file {path}: {e}") from e
    if frame.empty:
        raise ValidationError(f"Trajectory file has no rows: {path}")
    missing = [c for c in (columns["time_s"], columns["velocity_mps"]) if c not in frame.columns]
    if missing:
        raise ValidationError(f"Trajectory file {path} lacks columns: {', '.join(missing)}")

    t = frame[columns["time_s"]].to_numpy(dtype=float) * time_scale
    v = frame[columns["velocity_mps"]].to_numpy(dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValidationError(f"Time column of {path} is not strictly increasing")

    n = int(np.floor((t[-1] - t[0]) / target_T + 1e-9)) + 1
    if n < 2:
        raise ValidationError(f"Trajectory {path} spans less than one interval of {target_T} s")
    grid = t[0] + target_T * np.arange(n)
    v_grid = np.interp(grid, t, v)
    acc = np.diff(v_grid) / target_T
    clipped = np.abs(acc) > acc_max
    clip_count = int(np.count_nonzero(clipped))
    if clip_count:
        logger.warning("%s: %d accelerations clipped to +-%g", path, clip_count, acc_max)
    acc = np.clip(acc, -acc_max, acc_max)
    return PredecessorTrajectory(
        acc=acc, T=target_T, source=TrajectorySource.FILE, v0=float(v_grid[0]),
        clip_count=clip_count,
    )


def recover_inputs(acc: np.ndarray, T: float, rho_pred: float) -> np.ndarray:
    """Invert the predecessor driveline recurrence to recover its control inputs.

    u_k = (acc_{k+1} - (1 - T/rho) acc_k) rho / T; the last input repeats the last
    acceleration.

    Args:
        acc: Predecessor acceleration series
        T: Control interval (s)
        rho_pred: Predecessor driveline constant (s)

    Returns:
        Inputs with the same length as acc
    """
    acc = np.asarray(acc, dtype=float).ravel()
    if acc.size == 0:
        return acc.copy()
    ratio = T / rho_pred
    u = np.empty_like(acc)
    u[:-1] = (acc[1:] - (1.0 - ratio) * acc[:-1]) / ratio
    u[-1] = acc[-1]
    return u
