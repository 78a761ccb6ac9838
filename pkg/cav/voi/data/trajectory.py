"""Trajectory data structures."""

from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd

from cav.voi.utils import write_frame


@dataclass(frozen=True)
class TransitionRecord:
    """One step (s, a, w, r, s_next) of a rollout."""

    s: np.ndarray
    a: np.ndarray
    w: np.ndarray
    r: float
    s_next: np.ndarray

    # Policy output fell outside the action bounds and was clamped
    clamped: bool = False


@dataclass
class Trajectory:
    """Ordered transition records of one seeded rollout."""

    steps: List[TransitionRecord] = field(default_factory=list)
    seed: int = 0
    gamma: float = 1.0

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([step.r for step in self.steps], dtype=float)

    @property
    def states(self) -> np.ndarray:
        """States s_0 .. s_K (one more row than steps)."""
        if not self.steps:
            return np.empty((0, 0))
        rows = [step.s for step in self.steps] + [self.steps[-1].s_next]
        return np.vstack(rows)

    @property
    def clamp_count(self) -> int:
        return sum(1 for step in self.steps if step.clamped)

    def to_frame(self) -> pd.DataFrame:
        """Convert to a DataFrame with columns step, s[i], a[i], w[i], r."""
        if not self.steps:
            return pd.DataFrame(columns=["step", "r"])
        first = self.steps[0]
        columns = (
            ["step"]
            + [f"s[{i}]" for i in range(first.s.shape[0])]
            + [f"a[{i}]" for i in range(first.a.shape[0])]
            + [f"w[{i}]" for i in range(first.w.shape[0])]
            + ["r"]
        )
        rows = [
            [k, *step.s.tolist(), *step.a.tolist(), *step.w.tolist(), step.r]
            for k, step in enumerate(self.steps)
        ]
        frame = pd.DataFrame(rows, columns=columns)
        frame["step"] = frame["step"].astype(int)
        return frame

    def to_csv(self, path: str) -> str:
        """Write the trajectory CSV and return its path."""
        return write_frame(self.to_frame(), path)
