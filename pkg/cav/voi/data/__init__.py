"""Data models for the VoI toolkit."""

from cav.voi.data.callback import (
    ResultCallbackData,
    RunError,
    RunProgress,
    RunResult,
    ScenarioOutput,
)
from cav.voi.data.comm import (
    CamQueue,
    ChannelState,
    CommAction,
    CommContext,
    DecisionScore,
    RateVectors,
    SlotGains,
    SlotReward,
)
from cav.voi.data.enums import (
    Activation,
    AugmentationKind,
    CommDecision,
    ExoKind,
    ObservationKind,
    ReceiverFallback,
    Scenario,
    TrajectorySource,
    VoiKind,
    VoiMethod,
)
from cav.voi.data.params import (
    CommOptions,
    ExperimentConfig,
    GridConfig,
    LinkGeometry,
    MethodAConfig,
    NetworkConfig,
    RewardWeights,
    StopAndGoConfig,
    TabularSuiteConfig,
    TrainConfig,
    VehicleParams,
)
from cav.voi.data.records import (
    ItvoiResult,
    MarkovReport,
    MethodAResult,
    OccupancyIdentityReport,
    VoiRecord,
)
from cav.voi.data.tables import PolicyTable, QTable, StateGrid, TabularMdp, ValueTable
from cav.voi.data.trajectory import TransitionRecord, Trajectory

__all__ = [
    "ResultCallbackData",
    "RunError",
    "RunProgress",
    "RunResult",
    "ScenarioOutput",
    "CamQueue",
    "ChannelState",
    "CommAction",
    "CommContext",
    "DecisionScore",
    "RateVectors",
    "SlotGains",
    "SlotReward",
    "Activation",
    "AugmentationKind",
    "CommDecision",
    "ExoKind",
    "ObservationKind",
    "ReceiverFallback",
    "Scenario",
    "TrajectorySource",
    "VoiKind",
    "VoiMethod",
    "CommOptions",
    "ExperimentConfig",
    "GridConfig",
    "LinkGeometry",
    "MethodAConfig",
    "NetworkConfig",
    "RewardWeights",
    "StopAndGoConfig",
    "TabularSuiteConfig",
    "TrainConfig",
    "VehicleParams",
    "ItvoiResult",
    "MarkovReport",
    "MethodAResult",
    "OccupancyIdentityReport",
    "VoiRecord",
    "PolicyTable",
    "QTable",
    "StateGrid",
    "TabularMdp",
    "ValueTable",
    "TransitionRecord",
    "Trajectory",
]
