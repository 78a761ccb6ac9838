"""Value of information for connected automated vehicles.

This package provides sequential stochastic decision processes with exogenous
information, tabular and neural solvers, VoI metrics, a vehicle-following environment,
a C-V2X communication simulator, and runners that reproduce the experiments.
"""

import logging

from cav.voi.runner import ExperimentRunner
from cav.voi.async_runner import AsyncExperimentRunner
from cav.voi.config import ValidationReport, build_config, load_config, validate
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
from cav.voi.data.enums import Scenario, VoiKind, VoiMethod
from cav.voi.data.callback import ResultCallbackData, RunError, RunProgress, RunResult
from cav.voi.data.records import VoiRecord
from cav.voi.data.tables import PolicyTable, StateGrid, TabularMdp
from cav.voi.ssdp import ExoProcess, SsdpEnv, SsdpSpec
from cav.voi.vehicle import ObservationModel, VehicleFollowingEnv
from cav.voi.predecessor import PredecessorTrajectory
from cav.voi.metrics import PolicyPair
from cav.voi.exceptions import (
    ConfigError,
    ContractViolationError,
    DivergenceError,
    EstimatorUnavailableError,
    RunTimeoutError,
    UnsupportedError,
    ValidationError,
    VoIError,
)

logging.getLogger(__name__).addHandler(logging.NullHandler())

__version__ = "1.0.0"

__all__ = [
    # Runners
    "ExperimentRunner",
    "AsyncExperimentRunner",
    "ValidationReport",
    "build_config",
    "load_config",
    "validate",
    # Parameters
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
    # Models
    "Scenario",
    "VoiKind",
    "VoiMethod",
    "ResultCallbackData",
    "RunError",
    "RunProgress",
    "RunResult",
    "VoiRecord",
    "PolicyTable",
    "StateGrid",
    "TabularMdp",
    "ExoProcess",
    "SsdpEnv",
    "SsdpSpec",
    "ObservationModel",
    "VehicleFollowingEnv",
    "PredecessorTrajectory",
    "PolicyPair",
    # Exceptions
    "VoIError",
    "ConfigError",
    "ContractViolationError",
    "DivergenceError",
    "EstimatorUnavailableError",
    "RunTimeoutError",
    "UnsupportedError",
    "ValidationError",
]
