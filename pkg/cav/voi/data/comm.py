"""Data classes of the C-V2X communication layer."""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from cav.voi.data.params import NetworkConfig
from cav.voi.exceptions import ContractViolationError

MODULE = "comm-sim"


@dataclass(frozen=True)
class SlotGains:
    """Instantaneous channel gains G = alpha * h of one communication interval.

    Index convention: i is the V2V link, j another V2V link, m the sub-channel.
    """

    # V2I link m to the base station, shape (M,)
    v2i: np.ndarray

    # V2V link i over sub-channel m, shape (L, M)
    v2v: np.ndarray

    # V2V transmitter i to the base station on sub-channel m, shape (L, M)
    v2v_to_bs: np.ndarray

    # V2I transmitter m to V2V receiver i, shape (L, M)
    v2i_to_v2v: np.ndarray

    # V2V transmitter j to V2V receiver i on sub-channel m, shape (L, L, M) as [j, i, m]
    v2v_cross: np.ndarray

    @property
    def n_subchannels(self) -> int:
        return int(self.v2i.shape[0])

    @property
    def n_links(self) -> int:
        return int(self.v2v.shape[0])

    @staticmethod
    def feature_dim(M: int, L: int) -> int:
        """Length of to_features() for M sub-channels and L V2V links."""
        return M + 3 * L * M + L * (L - 1) * M

    def to_features(self) -> np.ndarray:
        """Flatten every gain family; the unused diagonal of v2v_cross is dropped."""
        L = self.n_links
        off_diag = ~np.eye(L, dtype=bool)
        return np.concatenate([
            self.v2i.ravel(),
            self.v2v.ravel(),
            self.v2v_to_bs.ravel(),
            self.v2i_to_v2v.ravel(),
            self.v2v_cross[off_diag].ravel(),
        ])

    @classmethod
    def from_features(cls, features: np.ndarray, M: int, L: int) -> "SlotGains":
        """Inverse of to_features.

        Raises:
            ContractViolationError: If the vector length does not match (M, L)
        """
        vec = np.asarray(features, dtype=float).ravel()
        if vec.size != cls.feature_dim(M, L):
            raise ContractViolationError(
                f"gain vector has {vec.size} entries, expected {cls.feature_dim(M, L)}",
                module=MODULE,
            )
        pos = 0

        def take(n: int) -> np.ndarray:
            nonlocal pos
            out = vec[pos:pos + n]
            pos += n
            return out

        v2i = take(M)
        v2v = take(L * M).reshape(L, M)
        v2v_to_bs = take(L * M).reshape(L, M)
        v2i_to_v2v = take(L * M).reshape(L, M)
        cross = np.zeros((L, L, M))
        cross[~np.eye(L, dtype=bool)] = take(L * (L - 1) * M).reshape(L * (L - 1), M)
        return cls(v2i=v2i, v2v=v2v, v2v_to_bs=v2v_to_bs, v2i_to_v2v=v2i_to_v2v,
                   v2v_cross=cross)


@dataclass(frozen=True)
class ChannelState:
    """Channel of one episode: large-scale gains alpha and per-slot small-scale fading h.

    alpha is fixed over the episode (static geometry). h has a leading slot axis of
    length n_slots = n_intervals * T_slots and a trailing sub-channel axis.

    Example:
        cs = sample_channel(LinkGeometry(), NetworkConfig(), seed=3, n_intervals=50)
        g = cs.slot(0)
    """

    alpha_v2i: np.ndarray
    alpha_v2v: np.ndarray
    alpha_v2v_to_bs: np.ndarray
    alpha_v2i_to_v2v: np.ndarray
    alpha_v2v_cross: np.ndarray

    h_v2i: np.ndarray
    h_v2v: np.ndarray
    h_v2v_to_bs: np.ndarray
    h_v2i_to_v2v: np.ndarray
    h_v2v_cross: np.ndarray

    @property
    def n_slots(self) -> int:
        return int(self.h_v2i.shape[0])

    @property
    def n_subchannels(self) -> int:
        return int(self.alpha_v2i.shape[0])

    @property
    def n_links(self) -> int:
        return int(self.alpha_v2v.shape[0])

    def slot(self, n: int) -> SlotGains:
        """Gains G = alpha * h at communication interval n.

        Raises:
            ContractViolationError: If n is outside the sampled slots
        """
        if not 0 <= n < self.n_slots:
            raise ContractViolationError(f"slot {n} outside [0, {self.n_slots})", module=MODULE)
        return SlotGains(
            v2i=self.alpha_v2i * self.h_v2i[n],
            v2v=self.alpha_v2v[:, None] * self.h_v2v[n],
            v2v_to_bs=self.alpha_v2v_to_bs[:, None] * self.h_v2v_to_bs[n],
            v2i_to_v2v=self.alpha_v2i_to_v2v * self.h_v2i_to_v2v[n],
            v2v_cross=self.alpha_v2v_cross[:, :, None] * self.h_v2v_cross[n],
        )

    @classmethod
    def fixed(
        cls,
        M: int = 1,
        L: int = 1,
        v2i: float = 1.0,
        v2v: float = 1.0,
        v2v_to_bs: float = 1.0,
        v2i_to_v2v: float = 1.0,
        v2v_cross: float = 1.0,
        n_slots: int = 1,
    ) -> "ChannelState":
        """Deterministic channel with the same gain on every link of a family."""
        return cls(
            alpha_v2i=np.full(M, float(v2i)),
            alpha_v2v=np.full(L, float(v2v)),
            alpha_v2v_to_bs=np.full(L, float(v2v_to_bs)),
            alpha_v2i_to_v2v=np.full((L, M), float(v2i_to_v2v)),
            alpha_v2v_cross=np.full((L, L), float(v2v_cross)),
            h_v2i=np.ones((n_slots, M)),
            h_v2v=np.ones((n_slots, L, M)),
            h_v2v_to_bs=np.ones((n_slots, L, M)),
            h_v2i_to_v2v=np.ones((n_slots, L, M)),
            h_v2v_cross=np.ones((n_slots, L, L, M)),
        )


@dataclass(frozen=True)
class CommAction:
    """Sub-channel allocation theta[i, m] in {0, 1} and V2V powers P_V[i, m] (W)."""

    theta: np.ndarray
    P_V: np.ndarray

    def validate(self, config: NetworkConfig) -> None:
        """Check shapes, one sub-channel per link at most, and the power box.

        Raises:
            ContractViolationError: On any violation
        """
        shape = (config.L, config.M)
        if self.theta.shape != shape or self.P_V.shape != shape:
            raise ContractViolationError(
                f"action arrays must have shape {shape}, got {self.theta.shape} and "
                f"{self.P_V.shape}",
                module=MODULE,
            )
        if not np.all(np.isin(self.theta, (0, 1))):
            raise ContractViolationError("theta entries must be 0 or 1", module=MODULE)
        if np.any(self.theta.sum(axis=1) > 1):
            raise ContractViolationError("a V2V link may occupy at most one sub-channel",
                                         module=MODULE)
        if np.any(self.P_V < 0) or np.any(self.P_V > config.P_V_max + 1e-15):
            raise ContractViolationError(
                f"V2V power must lie in [0, {config.P_V_max}] W", module=MODULE
            )

    @classmethod
    def fixed(cls, config: NetworkConfig, power: Optional[float] = None) -> "CommAction":
        """Link i on sub-channel i mod M at the given power (P_V_max by default)."""
        theta = np.zeros((config.L, config.M))
        theta[np.arange(config.L), np.arange(config.L) % config.M] = 1.0
        p = config.P_V_max if power is None else float(power)
        return cls(theta=theta, P_V=theta * p)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.theta.ravel(), self.P_V.ravel()])

    @classmethod
    def from_vector(cls, vec: np.ndarray, config: NetworkConfig) -> "CommAction":
        """Decode [theta, P_V]; each link keeps its largest theta entry when above 0.5."""
        vec = np.asarray(vec, dtype=float).ravel()
        n = config.L * config.M
        if vec.size != 2 * n:
            raise ContractViolationError(
                f"action vector has {vec.size} entries, expected {2 * n}", module=MODULE
            )
        raw = vec[:n].reshape(config.L, config.M)
        theta = np.zeros_like(raw)
        best = np.argmax(raw, axis=1)
        chosen = raw[np.arange(config.L), best] >= 0.5
        theta[np.arange(config.L)[chosen], best[chosen]] = 1.0
        P_V = np.clip(vec[n:].reshape(config.L, config.M), 0.0, config.P_V_max) * theta
        return cls(theta=theta, P_V=P_V)


@dataclass(frozen=True)
class CamQueue:
    """CAM buffer of one predecessor."""

    # Untransmitted fraction of the current CAM
    q: float = 0.0

    # Whether the CAM of the current control interval was queued
    phi: int = 0

    # Observation delay at the follower (control intervals)
    tau: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.q <= 1.0:
            raise ContractViolationError(f"queue length must be in [0, 1], got {self.q}",
                                         module=MODULE)
        if self.phi not in (0, 1):
            raise ContractViolationError(f"phi must be 0 or 1, got {self.phi}", module=MODULE)
        if self.tau < 1:
            raise ContractViolationError(f"tau must be >= 1, got {self.tau}", module=MODULE)


@dataclass(frozen=True)
class RateVectors:
    """Per-link SINRs and rates of one communication interval."""

    sinr_v2i: np.ndarray
    sinr_v2v: np.ndarray

    # bit/s
    v2i: np.ndarray
    v2v: np.ndarray

    # CAM/s
    cam: np.ndarray


@dataclass(frozen=True)
class SlotReward:
    """How-to-communicate reward of one slot, split into its two terms."""

    # kappa1 * sum_m C_m
    throughput: float

    # kappa2 * sum_i xi_{i,k+1}, non-zero only in the last slot of a control interval
    voi: float = 0.0

    @property
    def total(self) -> float:
        return self.throughput + self.voi

    def __float__(self) -> float:
        return self.total


@dataclass(frozen=True)
class CommContext:
    """What a communication policy sees at the start of control interval k."""

    k: int
    gains: SlotGains

    # Per-link predecessor signals of interval k
    acc_pred: np.ndarray
    u_pred: np.ndarray

    # Per-link observation delays entering interval k
    tau: np.ndarray

    # Signal exposed in the communication state: "u_pred" or "acc_pred"
    pred_signal: str = "u_pred"

    @property
    def signal(self) -> np.ndarray:
        return self.acc_pred if self.pred_signal == "acc_pred" else self.u_pred

    def state(self) -> np.ndarray:
        """When-to-communicate state {G_(k,0), signal_k}."""
        return np.concatenate([self.gains.to_features(), self.signal])


@dataclass
class DecisionScore:
    """J^CM of one candidate communication decision."""

    name: str
    jcm: float
    ci: Tuple[float, float]
    throughput: float
    evoi: float
    n_episodes: int
    per_episode: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "jcm": self.jcm,
            "ci": list(self.ci),
            "throughput": self.throughput,
            "evoi": self.evoi,
            "n_episodes": self.n_episodes,
        }
