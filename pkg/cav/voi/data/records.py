"""Result records: VoI measurements and check reports."""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from cav.voi.data.enums import VoiKind, VoiMethod
from cav.voi.utils import write_frame

VOI_COLUMNS = ["kind", "value", "ci_lo", "ci_hi", "method", "k"]


@dataclass
class VoiRecord:
    """One VoI measurement.

    Attributes:
        kind: EVoMI, EVoII, IVoMI, IVoII or ITVoI
        value: The measured value
        method: Estimator provenance
        context: State/action snapshot or aggregate description
        ci: Optional 95% confidence interval (low, high)
        k: Control step for per-step kinds
        state: State snapshot for per-step kinds
        action: Inferior action for per-step kinds
    """

    kind: VoiKind
    value: float
    method: VoiMethod
    context: Dict[str, Any] = field(default_factory=dict)
    ci: Optional[Tuple[float, float]] = None
    k: Optional[int] = None
    state: Optional[np.ndarray] = None
    action: Optional[np.ndarray] = None

    def is_non_positive(self, tol: float = 0.0) -> bool:
        """True for utility kinds when value <= tol; ITVoI always passes."""
        if self.kind == VoiKind.ITVOI:
            return True
        return self.value <= tol

    def to_row(self) -> Dict[str, Any]:
        row: Dict[str, Any] = {
            "kind": self.kind.value,
            "value": self.value,
            "ci_lo": self.ci[0] if self.ci else np.nan,
            "ci_hi": self.ci[1] if self.ci else np.nan,
            "method": self.method.value,
            "k": self.k if self.k is not None else -1,
        }
        if self.state is not None:
            for i, v in enumerate(np.asarray(self.state).ravel()):
                row[f"s[{i}]"] = float(v)
        if self.action is not None:
            for i, v in enumerate(np.asarray(self.action).ravel()):
                row[f"a[{i}]"] = float(v)
        return row


def records_to_frame(records: Sequence[VoiRecord]) -> pd.DataFrame:
    """Tabulate records with the fixed leading columns, then state and action fields."""
    frame = pd.DataFrame([r.to_row() for r in records])
    if frame.empty:
        return pd.DataFrame(columns=VOI_COLUMNS)
    extra = [c for c in frame.columns if c not in VOI_COLUMNS]
    states = sorted((c for c in extra if c.startswith("s[")), key=lambda c: int(c[2:-1]))
    actions = sorted((c for c in extra if c.startswith("a[")), key=lambda c: int(c[2:-1]))
    return frame[VOI_COLUMNS + states + actions]


def write_records(records: Sequence[VoiRecord], path: str) -> str:
    """Write records as a VoI CSV."""
    return write_frame(records_to_frame(records), path)


@dataclass
class MarkovReport:
    """Outcome of the Markov property check.

    Attributes:
        is_markov: Final verdict
        structural: Verdict from the exogenous process declaration, None if undetermined
        chi2: Pooled chi-square statistic of history dependence
        dof: Pooled degrees of freedom
        p_value: Pooled p-value (1.0 when no testable group exists)
        n_samples: Number of (previous, current, action, next) samples
        groups_tested: Number of (cell, action) groups with a testable table
        alpha: Significance level
    """

    is_markov: bool
    structural: Optional[bool]
    chi2: float
    dof: int
    p_value: float
    n_samples: int
    groups_tested: int
    alpha: float = 0.01


@dataclass
class OccupancyIdentityReport:
    """Comparison of EVoI with the occupancy-weighted cumulative IVoI."""

    evoi: float
    cumulative_ivoi: float
    gap: float
    passed: bool
    method: VoiMethod
    tolerance: float
    standard_error: Optional[float] = None


@dataclass
class ItvoiResult:
    """ITVoI value with its two KL terms."""

    value: float
    transition_kl: float
    reward_kl: float
    diagnostic: Optional[str] = None
    weighting: str = "supplied"


@dataclass
class MethodAResult:
    """Rollout-labelled IVoI dataset and optional fitted estimator.

    Attributes:
        states: Rollout-set states (n, state_dim)
        inferior_actions: a_inf per state (n, action_dim)
        labels: Mean return difference per state
        standard_errors: Standard error of each label
        samples: Per-rollout differences (n, rollouts_per_state)
        estimator: Fitted regressor, if fitting was requested
        train_mse: Training MSE of the estimator
    """

    states: np.ndarray
    inferior_actions: np.ndarray
    labels: np.ndarray
    standard_errors: np.ndarray
    samples: np.ndarray
    estimator: Any = None
    train_mse: Optional[float] = None

    def dataset(self) -> List[Tuple[np.ndarray, np.ndarray, float]]:
        """(state, inferior action, label) triples."""
        return [
            (self.states[i], self.inferior_actions[i], float(self.labels[i]))
            for i in range(self.labels.shape[0])
        ]
