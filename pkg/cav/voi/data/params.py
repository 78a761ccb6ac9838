"""Parameter dataclasses for the vehicle, training, network and experiment layers."""

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Type, TypeVar

import numpy as np

from cav.voi.exceptions import ConfigError, ContractViolationError

P = TypeVar("P", bound="_Params")


class _Params:
    """Shared dict conversion for parameter dataclasses."""

    def to_dict(self) -> Dict[str, Any]:
        """Convert to a plain dict (tuples become lists)."""
        out: Dict[str, Any] = {}
        for f in dataclasses.fields(self):  # type: ignore[arg-type]
            value = getattr(self, f.name)
            if isinstance(value, _Params):
                value = value.to_dict()
            elif isinstance(value, tuple):
                value = list(value)
            elif isinstance(value, dict):
                value = dict(value)
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls: Type[P], data: Optional[Dict[str, Any]]) -> P:
        """Create from a dict, rejecting unknown keys.

        Args:
            data: Field values; missing fields keep their defaults

        Returns:
            New instance

        Raises:
            ConfigError: If data holds keys the class does not define
        """
        data = data or {}
        known = {f.name: f for f in dataclasses.fields(cls)}  # type: ignore[arg-type]
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(
                f"Unknown {cls.__name__} keys: {', '.join(unknown)}",
                violations=[f"{cls.__name__}.{k}" for k in unknown],
            )
        kwargs = {}
        for name, value in data.items():
            default = getattr(cls, name, None) if name in known else None
            if isinstance(default, tuple) and isinstance(value, list):
                value = tuple(value)
            kwargs[name] = value
        return cls(**kwargs)  # type: ignore[call-arg]

    def copy(self: P) -> P:
        """Create a copy of this instance."""
        return dataclasses.replace(self)  # type: ignore[type-var]


@dataclass(frozen=True)
class VehicleParams(_Params):
    """Longitudinal vehicle model parameters.

    Example:
        params = VehicleParams(rho=0.5, T=0.1)
        A, B, C = params.matrices()
    """

    # Driveline time constant (s)
    rho: float = 0.5

    # Desired time gap (s)
    h: float = 1.0

    # Standstill distance (m)
    sigma: float = 2.0

    # Predecessor length (m)
    L_pred: float = 5.0

    # Control interval (s)
    T: float = 0.1

    # Control input bound (m/s^2)
    u_max: float = 3.0

    # Acceleration bound (m/s^2)
    acc_max: float = 3.0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Check the discretization is stable and bounds are positive.

        Raises:
            ContractViolationError: On an invalid combination
        """
        if not self.rho > 0:
            raise ContractViolationError(f"rho must be > 0, got {self.rho}", module="vehicle-env")
        if not self.T > 0:
            raise ContractViolationError(f"T must be > 0, got {self.T}", module="vehicle-env")
        if not self.T < self.rho:
            raise ContractViolationError(
                f"T must be < rho for a stable forward Euler step, got T={self.T}, rho={self.rho}",
                module="vehicle-env",
            )
        if self.u_max <= 0 or self.acc_max <= 0:
            raise ContractViolationError("u_max and acc_max must be > 0", module="vehicle-env")
        if self.h < 0 or self.sigma < 0 or self.L_pred < 0:
            raise ContractViolationError("h, sigma and L_pred must be >= 0", module="vehicle-env")

    @property
    def decay(self) -> float:
        """Per-step acceleration retention 1 - T/rho."""
        return 1.0 - self.T / self.rho

    def matrices(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return the discrete-time (A, B, C) of x' = A x + B u + C acc_pred."""
        T, rho, h = self.T, self.rho, self.h
        A = np.array(
            [
                [1.0, T, -h * T],
                [0.0, 1.0, -T],
                [0.0, 0.0, 1.0 - T / rho],
            ]
        )
        B = np.array([0.0, 0.0, T / rho])
        C = np.array([0.0, T, 0.0])
        return A, B, C


@dataclass(frozen=True)
class RewardWeights(_Params):
    """Weights and normalizers of the vehicle-following reward."""

    a: float = 1.0
    b: float = 1.0
    c: float = 1.0

    # Nominal maximum control errors
    e_p_max_hat: float = 15.0
    e_v_max_hat: float = 10.0

    # Terms below this magnitude are squared (None disables)
    huber_delta: Optional[float] = None

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Raise ContractViolationError unless every weight is positive."""
        values = [self.a, self.b, self.c, self.e_p_max_hat, self.e_v_max_hat]
        if self.huber_delta is not None:
            values.append(self.huber_delta)
        if any(not v > 0 for v in values):
            raise ContractViolationError("reward weights must all be > 0", module="vehicle-env")


@dataclass(frozen=True)
class StopAndGoConfig(_Params):
    """Synthetic stop-and-go predecessor profile.

    Ranges are (low, high) and sampled uniformly per phase.
    """

    # Acceleration magnitude of accelerate phases (m/s^2)
    accel_magnitude: Tuple[float, float] = (0.5, 1.5)

    # Deceleration magnitude of brake phases (m/s^2)
    brake_magnitude: Tuple[float, float] = (0.5, 2.0)

    # Phase durations (s)
    accel_dwell: Tuple[float, float] = (2.0, 5.0)
    cruise_dwell: Tuple[float, float] = (3.0, 8.0)
    brake_dwell: Tuple[float, float] = (2.0, 5.0)

    # Initial predecessor speed (m/s)
    v0: float = 10.0

    def validate(self) -> None:
        """Raise ConfigError on inverted ranges or negative values."""
        for name in ("accel_magnitude", "brake_magnitude", "accel_dwell", "cruise_dwell",
                     "brake_dwell"):
            low, high = getattr(self, name)
            if low < 0 or high < low:
                raise ConfigError(f"stop_and_go.{name} must satisfy 0 <= low <= high",
                                  violations=[f"stop_and_go.{name}"])
        if self.v0 < 0:
            raise ConfigError("stop_and_go.v0 must be >= 0", violations=["stop_and_go.v0"])


@dataclass(frozen=True)
class NetworkConfig(_Params):
    """C-V2X network parameters.

    Example:
        config = NetworkConfig(M=1, L=1, T_slots=10, dt=0.01, control_interval=0.1)
    """

    # Link counts
    M: int = 1
    L: int = 1

    # Sub-channel bandwidth (Hz)
    B: float = 180e3

    # CAM size (bits)
    N_c: float = 3200.0

    # Noise power (W), -114 dBm
    sigma2: float = 10 ** (-114 / 10) / 1000

    # Transmit powers (W)
    P_I: float = 0.2
    P_V_max: float = 0.2

    # Communication intervals per control interval and their duration (s)
    T_slots: int = 10
    dt: float = 0.01

    # Control interval the slots must tile (s)
    control_interval: float = 0.1

    # Objective weights and communication discount
    kappa1: float = 1e-6
    kappa2: float = 1.0
    gamma_cm: float = 0.99

    # Channel model: reference loss at 1 m (dB), log-distance exponents, shadowing (dB)
    pl0_db: float = 47.0
    exponent_v2i: float = 2.0
    exponent_v2v: float = 3.0
    exponent_interference: float = 3.0
    shadowing_std_db: float = 3.0
    fading: bool = True

    def violations(self) -> List[str]:
        """Return every violated constraint as a message."""
        found = []
        if self.M < 1 or self.L < 1 or self.T_slots < 1:
            found.append("network: M, L and T_slots must be >= 1")
        if abs(self.dt * self.T_slots - self.control_interval) > 1e-9:
            found.append(
                f"network: dt*T_slots = {self.dt * self.T_slots:g} s must equal the control "
                f"interval T = {self.control_interval:g} s"
            )
        if self.B <= 0 or self.N_c <= 0 or self.sigma2 <= 0:
            found.append("network: B, N_c and sigma2 must be > 0")
        if self.P_I < 0 or self.P_V_max < 0:
            found.append("network: powers must be >= 0")
        if not 0.0 <= self.gamma_cm <= 1.0:
            found.append("network: gamma_cm must be in [0, 1]")
        return found

    def validate(self) -> None:
        """Raise ConfigError listing every violation."""
        found = self.violations()
        if found:
            raise ConfigError("; ".join(found), violations=found)


@dataclass(frozen=True)
class LinkGeometry(_Params):
    """Static link distances (m) for one episode.

    Shapes follow the link families: V2I direct (M), V2V direct (L), V2V transmitter to
    base station (L), V2I transmitter to V2V receiver (L x M) and V2V transmitter to V2V
    receiver (L x L, diagonal unused).
    """

    d_v2i: Tuple[float, ...] = (200.0,)
    d_v2v: Tuple[float, ...] = (20.0,)
    d_v2v_to_bs: Tuple[float, ...] = (200.0,)
    d_v2i_to_v2v: Tuple[Tuple[float, ...], ...] = ((25.0,),)
    d_v2v_cross: Tuple[Tuple[float, ...], ...] = ((1.0,),)

    def arrays(self) -> Dict[str, np.ndarray]:
        """Return the distances as float arrays keyed by field name."""
        return {f.name: np.asarray(getattr(self, f.name), dtype=float)
                for f in dataclasses.fields(self)}

    def validate(self, config: Optional["NetworkConfig"] = None) -> None:
        """Check shapes against the link counts and reject non-positive distances.

        Raises:
            ContractViolationError: On zero or negative distances or wrong shapes
        """
        arr = self.arrays()
        for name, values in arr.items():
            mask = np.ones_like(values, dtype=bool)
            if name == "d_v2v_cross" and values.ndim == 2 and values.shape[0] == values.shape[1]:
                np.fill_diagonal(mask, False)
            if np.any(values[mask] <= 0):
                raise ContractViolationError(f"geometry.{name} has a zero or negative distance",
                                             module="comm-sim")
        if config is not None:
            expected = {
                "d_v2i": (config.M,),
                "d_v2v": (config.L,),
                "d_v2v_to_bs": (config.L,),
                "d_v2i_to_v2v": (config.L, config.M),
                "d_v2v_cross": (config.L, config.L),
            }
            for name, shape in expected.items():
                if arr[name].shape != shape:
                    raise ContractViolationError(
                        f"geometry.{name} has shape {arr[name].shape}, expected {shape}",
                        module="comm-sim",
                    )

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "LinkGeometry":
        data = dict(data or {})
        for name, value in list(data.items()):
            if isinstance(value, list):
                data[name] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        return super().from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        return {name: values.tolist() for name, values in self.arrays().items()}


@dataclass(frozen=True)
class TrainConfig(_Params):
    """TD3 and regression settings."""

    # Network shape
    hidden_sizes: Tuple[int, ...] = (64, 64)
    activation: str = "tanh"

    # Adam learning rates
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    value_lr: float = 1e-3

    # TD3 constants
    batch_size: int = 256
    tau: float = 0.005
    policy_delay: int = 2
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    expl_noise: float = 0.1

    # Schedule
    total_steps: int = 50_000
    start_steps: int = 1_000
    buffer_size: int = 200_000
    train_value_head: bool = True

    # Divergence guard on abs(Q)
    q_limit: float = 1e6

    # Supervised fitting (advantage estimator, Monte-Carlo critic refit)
    fit_epochs: int = 300
    fit_lr: float = 1e-2
    fit_batch_size: int = 64

    # Episodes between INFO log lines
    log_every: int = 10

    def validate(self) -> None:
        """Raise ConfigError on non-positive sizes or rates."""
        found = []
        if any(h < 1 for h in self.hidden_sizes):
            found.append("train.hidden_sizes must be >= 1")
        if self.activation not in ("tanh", "relu"):
            found.append("train.activation must be tanh or relu")
        if self.batch_size < 1 or self.total_steps < 1 or self.policy_delay < 1:
            found.append("train.batch_size, total_steps and policy_delay must be >= 1")
        if not 0.0 < self.tau <= 1.0:
            found.append("train.tau must be in (0, 1]")
        if found:
            raise ConfigError("; ".join(found), violations=found)


@dataclass(frozen=True)
class MethodAConfig(_Params):
    """Monte-Carlo rollout labelling settings."""

    rollout_set_size: int = 50
    rollouts_per_state: int = 200

    # Probability the mixed exploration policy picks pi_inf at a step
    mix_prob: float = 0.5

    # Rollout length after the start pair
    horizon: int = 200

    # Episodes per policy used to collect candidate states
    collection_episodes: int = 5

    # Fit an estimator on the labels
    fit: bool = True

    def validate(self) -> None:
        """Raise ConfigError on empty rollout sets or bad probabilities."""
        found = []
        if self.rollout_set_size < 1:
            found.append("method_a.rollout_set_size must be >= 1")
        if self.rollouts_per_state < 1:
            found.append("method_a.rollouts_per_state must be >= 1")
        if not 0.0 <= self.mix_prob <= 1.0:
            found.append("method_a.mix_prob must be in [0, 1]")
        if found:
            raise ConfigError("; ".join(found), violations=found)


@dataclass(frozen=True)
class GridConfig(_Params):
    """Discretization grid of the vehicle-following tabular model."""

    e_p: Tuple[float, ...] = (-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0)
    e_v: Tuple[float, ...] = (-2.0, -1.0, 0.0, 1.0, 2.0)
    acc: Tuple[float, ...] = (-2.0, -1.0, 0.0, 1.0, 2.0)
    acc_pred: Tuple[float, ...] = (-2.0, -1.0, 0.0, 1.0, 2.0)
    u: Tuple[float, ...] = (-3.0, -1.5, 0.0, 1.5, 3.0)

    # Predecessor driveline constant used by the tabular model (s)
    rho_pred: float = 0.125

    def validate(self) -> None:
        """Raise ConfigError on empty axes."""
        empty = [f.name for f in dataclasses.fields(self)
                 if isinstance(getattr(self, f.name), tuple) and not getattr(self, f.name)]
        if empty:
            raise ConfigError(f"grid axes are empty: {', '.join(empty)}",
                              violations=[f"grid.{n}" for n in empty])


@dataclass(frozen=True)
class CommOptions(_Params):
    """Communication experiment knobs."""

    # Gate on the predecessor acceleration magnitude (m/s^2)
    gate: float = 1e-3

    # What the follower uses when no CAM arrived
    receiver_fallback: str = "dummy"

    # Communication state exposes "u_pred" (default) or "acc_pred"
    pred_signal: str = "u_pred"

    # Number of seeded runs per policy
    runs: int = 20

    # Decisions ranked by the custom scenario
    candidates: Tuple[str, ...] = ("always", "gated", "never")

    def validate(self) -> None:
        """Raise ConfigError on unknown option values."""
        found = []
        if self.gate < 0:
            found.append("comm.gate must be >= 0")
        if self.receiver_fallback not in ("dummy", "last_received"):
            found.append("comm.receiver_fallback must be dummy or last_received")
        if self.pred_signal not in ("u_pred", "acc_pred"):
            found.append("comm.pred_signal must be u_pred or acc_pred")
        if self.runs < 1:
            found.append("comm.runs must be >= 1")
        unknown = [c for c in self.candidates if c not in ("always", "gated", "never")]
        if unknown or not self.candidates:
            found.append("comm.candidates must be a non-empty subset of always, gated, never")
        if found:
            raise ConfigError("; ".join(found), violations=found)


@dataclass(frozen=True)
class TabularSuiteConfig(_Params):
    """Sizes of the random tabular property suites."""

    n_instances: int = 100
    max_states: int = 50
    max_actions: int = 4
    max_exo: int = 4
    identity_states: int = 20
    identity_actions: int = 3
    gamma: float = 0.9

    def validate(self) -> None:
        """Raise ConfigError on empty suites or a bad discount."""
        found = []
        if self.n_instances < 1:
            found.append("tabular.n_instances must be >= 1")
        if min(self.max_states, self.max_actions, self.max_exo) < 1:
            found.append("tabular sizes must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            found.append("tabular.gamma must be in [0, 1)")
        if found:
            raise ConfigError("; ".join(found), violations=found)


@dataclass
class ExperimentConfig(_Params):
    """Complete description of one experiment run.

    Example:
        config = ExperimentConfig(scenario="case11_comm", seed=7, out_dir="runs/c11")
    """

    scenario: str = "tabular_properties"
    seed: int = 0
    episodes: int = 20
    out_dir: str = "runs/default"

    # Control-interval episode length K
    horizon: int = 500

    # Discount of the control task
    gamma: float = 0.95

    # Where pi_sup comes from in case8_voi: "dp" or "td3"
    policy_source: str = "dp"

    # Predecessor velocity CSV replacing the synthetic stop-and-go trace
    trajectory_path: Optional[str] = None

    # The --set map that produced this config
    overrides: Dict[str, Any] = field(default_factory=dict)

    vehicle: VehicleParams = field(default_factory=VehicleParams)
    reward: RewardWeights = field(default_factory=RewardWeights)
    stop_and_go: StopAndGoConfig = field(default_factory=StopAndGoConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    geometry: LinkGeometry = field(default_factory=LinkGeometry)
    train: TrainConfig = field(default_factory=TrainConfig)
    method_a: MethodAConfig = field(default_factory=MethodAConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    comm: CommOptions = field(default_factory=CommOptions)
    tabular: TabularSuiteConfig = field(default_factory=TabularSuiteConfig)

    SECTIONS = {
        "vehicle": VehicleParams,
        "reward": RewardWeights,
        "stop_and_go": StopAndGoConfig,
        "network": NetworkConfig,
        "geometry": LinkGeometry,
        "train": TrainConfig,
        "method_a": MethodAConfig,
        "grid": GridConfig,
        "comm": CommOptions,
        "tabular": TabularSuiteConfig,
    }

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "ExperimentConfig":
        data = dict(data or {})
        unknown = sorted(set(data) - {f.name for f in dataclasses.fields(cls)})
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}", violations=unknown)
        kwargs: Dict[str, Any] = {}
        for name, value in data.items():
            section = cls.SECTIONS.get(name)
            if section is not None:
                try:
                    kwargs[name] = section.from_dict(value)
                except ContractViolationError as e:
                    raise ConfigError(f"{name}: {e}", violations=[name]) from e
            else:
                kwargs[name] = value
        return cls(**kwargs)

    def copy(self) -> "ExperimentConfig":
        """Create a deep copy of this config."""
        return ExperimentConfig.from_dict(self.to_dict())
