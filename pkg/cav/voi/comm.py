"""C-V2X communication layer shaped by value of information.

V2V links reuse the sub-channels of V2I links to carry each predecessor's CAM to its
follower. At the start of every control interval the predecessor samples its
acceleration, decides whether to queue the CAM (phi), and the CAM drains over the T
communication intervals of that control interval. A CAM not fully delivered by the
last slot is discarded; the follower's observation delay tau grows until a CAM gets
through.

Communication rewards combine discounted V2I throughput with the follower's IVoI at
the next control interval, so communication decisions are scored by what they cost
the control task.
"""

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import (
    Any,
    Callable,
    Dict,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
import pandas as pd

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
from cav.voi.data.enums import CommDecision, ReceiverFallback
from cav.voi.data.params import LinkGeometry, NetworkConfig, RewardWeights, VehicleParams
from cav.voi.exceptions import ContractViolationError, EstimatorUnavailableError, ValidationError
from cav.voi.predecessor import PredecessorTrajectory, recover_inputs
from cav.voi.ssdp import Policy, SsdpSpec
from cav.voi.utils import derive_seeds, discount_weights, make_rng, max_workers, mean_ci
from cav.voi.vehicle import ACC_PRED_SLOT, ObservationModel, VehicleFollowingEnv

logger = logging.getLogger(__name__)

MODULE = "comm-sim"

# xi_{i,k+1} per link given the control interval k and which links delivered its CAM
IvoiEvaluator = Callable[[int, np.ndarray], Any]

# Slot-level allocation: (context of the control interval, slot t, queues) -> action
HowPolicy = Callable[[CommContext, int, Sequence[CamQueue]], CommAction]

GainsLike = Union[ChannelState, SlotGains]


# ==================== Channel ====================


def _path_gain(
    d: np.ndarray, exponent: float, config: NetworkConfig, rng: np.random.Generator
) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    safe = np.where(d > 0, d, 1.0)
    loss_db = config.pl0_db + 10.0 * exponent * np.log10(safe)
    if config.shadowing_std_db > 0:
        loss_db = loss_db + rng.normal(0.0, config.shadowing_std_db, size=d.shape)
    return np.where(d > 0, 10.0 ** (-loss_db / 10.0), 0.0)


def _slot_fading(config: NetworkConfig, rng: np.random.Generator) -> Tuple[np.ndarray, ...]:
    M, L = config.M, config.L
    shapes = [(M,), (L, M), (L, M), (L, M), (L, L, M)]
    if not config.fading:
        return tuple(np.ones(shape) for shape in shapes)
    # Rayleigh amplitude, unit-mean exponential power
    return tuple(rng.exponential(1.0, size=shape) for shape in shapes)


def _large_scale(
    geometry: LinkGeometry, config: NetworkConfig, rng: np.random.Generator
) -> Dict[str, np.ndarray]:
    d = geometry.arrays()
    cross = _path_gain(d["d_v2v_cross"], config.exponent_interference, config, rng)
    np.fill_diagonal(cross, 0.0)
    return {
        "alpha_v2i": _path_gain(d["d_v2i"], config.exponent_v2i, config, rng),
        "alpha_v2v": _path_gain(d["d_v2v"], config.exponent_v2v, config, rng),
        "alpha_v2v_to_bs": _path_gain(d["d_v2v_to_bs"], config.exponent_interference, config,
                                      rng),
        "alpha_v2i_to_v2v": _path_gain(d["d_v2i_to_v2v"], config.exponent_interference,
                                       config, rng),
        "alpha_v2v_cross": cross,
    }


def sample_channel(
    geometry: LinkGeometry,
    config: NetworkConfig,
    seed: Optional[Union[int, np.random.Generator]] = 0,
    n_intervals: int = 1,
) -> ChannelState:
    """Sample the channel of one episode.

    Large-scale gains follow log-distance path loss with log-normal shadowing and stay
    fixed for the episode. Small-scale fading is redrawn every communication interval.

    Args:
        geometry: Link distances (m)
        config: Network and channel-model parameters
        seed: Seed or generator
        n_intervals: Control intervals to cover; the fading has n_intervals * T_slots rows

    Returns:
        ChannelState

    Raises:
        ContractViolationError: On a zero or negative distance or mismatched shapes
    """
    geometry.validate(config)
    if n_intervals < 1:
        raise ContractViolationError(f"n_intervals must be >= 1, got {n_intervals}",
                                     module=MODULE)
    rng = make_rng(seed)
    alphas = _large_scale(geometry, config, rng)
    slots = [_slot_fading(config, rng) for _ in range(n_intervals * config.T_slots)]
    fading = [np.stack(family) for family in zip(*slots)]
    return ChannelState(
        **alphas,
        h_v2i=fading[0],
        h_v2v=fading[1],
        h_v2v_to_bs=fading[2],
        h_v2i_to_v2v=fading[3],
        h_v2v_cross=fading[4],
    )


# ==================== SINR and rates ====================


def _gains(cs: GainsLike, n: int) -> SlotGains:
    return cs if isinstance(cs, SlotGains) else cs.slot(n)


def _phi(phi: Any, L: int) -> np.ndarray:
    vec = np.atleast_1d(np.asarray(phi, dtype=float)).ravel()
    if vec.size == 1 and L > 1:
        vec = np.full(L, vec[0])
    if vec.size != L:
        raise ContractViolationError(f"phi has {vec.size} entries, expected {L}", module=MODULE)
    return vec


def sinr_v2i(
    cs: GainsLike, action: CommAction, phi: Any, config: NetworkConfig, m: int, n: int = 0
) -> float:
    """SINR of V2I link m: P_I G_m / (sigma2 + sum_i phi_i theta_im P_V_im G_{i,B,m}).

    Args:
        cs: Channel (slot n is used) or the gains of one slot
        action: Sub-channel allocation and powers
        phi: Transmission indicator per V2V link
        config: Network parameters
        m: Sub-channel / V2I link index
        n: Communication interval index into cs
    """
    g = _gains(cs, n)
    phi = _phi(phi, config.L)
    interference = float(np.sum(phi * action.theta[:, m] * action.P_V[:, m] * g.v2v_to_bs[:, m]))
    return float(config.P_I * g.v2i[m] / (config.sigma2 + interference))


def sinr_v2v(
    cs: GainsLike,
    action: CommAction,
    phi: Any,
    config: NetworkConfig,
    i: int,
    m: int,
    n: int = 0,
) -> float:
    """SINR of V2V link i on sub-channel m.

    The interference is the V2I transmitter of sub-channel m plus every other active
    V2V link sharing it.

    Raises:
        ContractViolationError: If link i does not occupy sub-channel m
    """
    if action.theta[i, m] != 1:
        raise ContractViolationError(f"V2V link {i} is not assigned to sub-channel {m}",
                                     module=MODULE)
    g = _gains(cs, n)
    phi = _phi(phi, config.L)
    others = np.arange(config.L) != i
    interference = config.P_I * g.v2i_to_v2v[i, m] + float(np.sum(
        (phi * action.theta[:, m] * action.P_V[:, m] * g.v2v_cross[:, i, m])[others]
    ))
    return float(action.P_V[i, m] * g.v2v[i, m] / (config.sigma2 + interference))


def rates(
    cs: GainsLike, action: CommAction, phi: Any, config: NetworkConfig, n: int = 0
) -> RateVectors:
    """Shannon rates B log2(1 + SINR) of every link and the V2V CAM rates C / N_c.

    A V2V link with phi = 0 carries no data; its SINR is still reported for its
    assigned sub-channel (NaN when it has none).
    """
    action.validate(config)
    g = _gains(cs, n)
    phi = _phi(phi, config.L)
    s_i = np.array([sinr_v2i(g, action, phi, config, m) for m in range(config.M)])
    s_v = np.full(config.L, np.nan)
    v2v = np.zeros(config.L)
    for i in range(config.L):
        for m in np.flatnonzero(action.theta[i]):
            s_v[i] = sinr_v2v(g, action, phi, config, i, int(m))
            v2v[i] += phi[i] * config.B * np.log2(1.0 + s_v[i])
    v2i = config.B * np.log2(1.0 + s_i)
    return RateVectors(sinr_v2i=s_i, sinr_v2v=s_v, v2i=v2i, v2v=v2v, cam=v2v / config.N_c)


# ==================== Queue and delay ====================


def queue_step(
    cq: CamQueue,
    cam_rate: float,
    config: NetworkConfig,
    t: int,
    phi_next: Optional[int] = None,
) -> CamQueue:
    """Queue length at communication interval t.

    t = 0 starts a control interval: the previous CAM is discarded and the queue holds
    phi_next. For 0 < t <= T_slots the queue drains by cam_rate * dt, the rate of
    slot t - 1.

    Raises:
        ContractViolationError: If t is outside [0, T_slots] or phi_next is missing at t = 0
    """
    if not 0 <= t <= config.T_slots:
        raise ContractViolationError(f"slot t={t} outside [0, {config.T_slots}]", module=MODULE)
    if t == 0:
        if phi_next is None:
            raise ContractViolationError("slot 0 needs the transmission decision phi_next",
                                         module=MODULE)
        phi = int(phi_next)
        return CamQueue(q=float(phi), phi=phi, tau=cq.tau)
    return CamQueue(q=max(0.0, cq.q - cam_rate * config.dt), phi=cq.phi, tau=cq.tau)


def delay_step(cq: CamQueue) -> int:
    """Observation delay for the next control interval, from the queue at its end.

    A queued CAM that drained completely resets the delay to 1. Otherwise (partial
    delivery, or nothing queued) the delay grows by one.
    """
    if cq.phi == 1 and cq.q == 0.0:
        return 1
    return cq.tau + 1


# ==================== Rewards ====================


def _voi_sum(ivoi_next: Any) -> float:
    return float(np.sum(np.asarray(ivoi_next, dtype=float)))


def comm_reward_when(v2i_rates: Any, ivoi_next: Any, config: NetworkConfig) -> float:
    """When-to-communicate reward of one control interval.

    kappa1 * sum_t gamma^t sum_m C_m,(k,t) + kappa2 * sum_i xi_{i,k+1}

    Args:
        v2i_rates: V2I rates per slot, shape (T_slots, M); a 1-D input is one rate per slot
        ivoi_next: IVoI of each follower at the next control interval
        config: Network parameters (kappa1, kappa2, gamma_cm)
    """
    C = np.asarray(v2i_rates, dtype=float)
    if C.ndim == 1:
        C = C.reshape(-1, 1)
    w = discount_weights(config.gamma_cm, C.shape[0])
    throughput = float(np.dot(w, config.kappa1 * C.sum(axis=1)))
    return throughput + config.kappa2 * _voi_sum(ivoi_next)


def comm_reward_how(
    v2i_rates: Any, t: int, ivoi_next: Any, config: NetworkConfig
) -> SlotReward:
    """How-to-communicate reward of slot t.

    kappa1 * sum_m C_m,(k,t), plus kappa2 * sum_i xi_{i,k+1} in the last slot.

    Raises:
        ContractViolationError: If t is outside [0, T_slots - 1]
    """
    if not 0 <= t < config.T_slots:
        raise ContractViolationError(f"slot t={t} outside [0, {config.T_slots})",
                                     module=MODULE)
    throughput = config.kappa1 * float(np.sum(np.asarray(v2i_rates, dtype=float)))
    voi = config.kappa2 * _voi_sum(ivoi_next) if t == config.T_slots - 1 else 0.0
    return SlotReward(throughput=throughput, voi=voi)


def discounted_slot_sum(rewards: Sequence[SlotReward], gamma: float) -> float:
    """Discounted sum of one control interval's slot rewards.

    Throughput terms are discounted by gamma^t; the VoI term counts once.
    """
    w = discount_weights(gamma, len(rewards))
    throughput = float(np.dot(w, [r.throughput for r in rewards]))
    return throughput + float(sum(r.voi for r in rewards))


def discounted_throughput(log: pd.DataFrame, config: NetworkConfig) -> float:
    """sum_k sum_t gamma^(kT+t) sum_m C_m,(k,t) from a slot log."""
    if log.empty:
        return 0.0
    cols = [c for c in log.columns if c.startswith("rate_v2i_")]
    exponent = log["k"].to_numpy(dtype=float) * config.T_slots + log["t"].to_numpy(dtype=float)
    return float(np.dot(np.power(config.gamma_cm, exponent), log[cols].sum(axis=1).to_numpy()))


def objective_jcm(log: Any, config: NetworkConfig, evoi: Any = None) -> float:
    """Joint objective kappa1 * discounted V2I throughput + kappa2 * sum of link EVoIs.

    Args:
        log: Slot log (columns k, t, rate_v2i_*) or a CommRun
        config: Network parameters
        evoi: EVoI per V2V link; taken from the run when log is a CommRun

    Raises:
        ValidationError: If no EVoI is available
    """
    if isinstance(log, CommRun):
        if evoi is None:
            evoi = log.evoi
        log = log.slot_log
    if evoi is None:
        raise ValidationError("objective_jcm needs the EVoI of every link")
    return config.kappa1 * discounted_throughput(log, config) + config.kappa2 * _voi_sum(evoi)


# ==================== Policies ====================


@dataclass(frozen=True)
class TransmitPolicy:
    """When-to-communicate policy returning phi for every V2V link.

    Called with a CommContext it gates on the sampled predecessor acceleration; called
    with a when-state vector it gates on the trailing signal entries.
    """

    # phi = 1 where |signal| > gate; None transmits always
    gate: Optional[float] = None

    n_links: int = 1
    name: str = "always"

    def __call__(self, x: Any) -> np.ndarray:
        if isinstance(x, CommContext):
            signal = np.asarray(x.acc_pred, dtype=float)
        else:
            signal = np.asarray(x, dtype=float).ravel()[-self.n_links:]
        if self.gate is None:
            return np.ones(signal.size)
        return (np.abs(signal) > self.gate).astype(float)


def policy_always_transmit(n_links: int = 1) -> TransmitPolicy:
    """Queue every CAM."""
    return TransmitPolicy(gate=None, n_links=n_links, name="always")


def policy_voi_gated(gate: float = 1e-3, n_links: int = 1) -> TransmitPolicy:
    """Suppress CAMs whose acceleration magnitude is at most gate.

    Raises:
        ContractViolationError: If gate is negative
    """
    if gate < 0:
        raise ContractViolationError(f"gate must be >= 0, got {gate}", module=MODULE)
    return TransmitPolicy(gate=float(gate), n_links=n_links, name="gated")


def policy_never_transmit(n_links: int = 1) -> TransmitPolicy:
    return TransmitPolicy(gate=float("inf"), n_links=n_links, name="never")


NAMED_POLICIES: Dict[str, Callable[..., TransmitPolicy]] = {
    "always": policy_always_transmit,
    "gated": policy_voi_gated,
    "never": policy_never_transmit,
}


# ==================== Communication SSDPs ====================


@dataclass
class CommHandles:
    """Episode inputs of the communication SSDPs."""

    geometry: LinkGeometry

    # Predecessor signal per control interval, shape (K, L)
    signal: np.ndarray

    # Recent predecessor inputs kept in the how-to-communicate state
    tau_max: int = 1

    def __post_init__(self) -> None:
        self.signal = np.asarray(self.signal, dtype=float)
        if self.signal.ndim == 1:
            self.signal = self.signal.reshape(-1, 1)
        if self.signal.shape[0] == 0:
            raise ValidationError("communication handles need a non-empty signal")
        if self.tau_max < 1:
            raise ContractViolationError(f"tau_max must be >= 1, got {self.tau_max}",
                                         module=MODULE)

    @property
    def horizon(self) -> int:
        return int(self.signal.shape[0])

    def signal_at(self, k: int) -> np.ndarray:
        return self.signal[min(max(k, 0), self.horizon - 1)]

    def recent(self, k: int) -> np.ndarray:
        """Signals of intervals k - tau_max + 1 .. k, oldest first, zero before the start."""
        out = np.zeros((self.tau_max, self.signal.shape[1]))
        for j, kk in enumerate(range(k - self.tau_max + 1, k + 1)):
            if kk >= 0:
                out[j] = self.signal_at(kk)
        return out.T.ravel()


class ChannelExoProcess:
    """Exogenous source of a communication SSDP: the episode's channel, slot by slot.

    When-kind samples are [k, 0, G(k,0) .. G(k,T-1), G(k+1,0)]; how-kind samples are
    [k, t, G(k,t), G(next slot)], each G flattened by SlotGains.to_features.
    """

    history_dependent = False
    structurally_markov = True
    is_enumerable = False

    def __init__(self, handles: CommHandles, config: NetworkConfig, kind: CommDecision):
        self.handles = handles
        self.config = config
        self.kind = CommDecision(kind)
        self.feature_dim = SlotGains.feature_dim(config.M, config.L)
        if self.kind == CommDecision.WHEN:
            self.w_dim = 2 + (config.T_slots + 1) * self.feature_dim
        else:
            self.w_dim = 2 + 2 * self.feature_dim

    def stream(self, rng: Optional[Union[int, np.random.Generator]] = None) -> "ChannelExoStream":
        return ChannelExoStream(self, make_rng(rng))


class ChannelExoStream:
    """Lazily drawn fading over a fixed large-scale channel."""

    def __init__(self, process: ChannelExoProcess, rng: np.random.Generator):
        self.process = process
        self.rng = rng
        self._alphas = _large_scale(process.handles.geometry, process.config, rng)
        self._features: List[np.ndarray] = []
        self.index = 0

    def features(self, n: int) -> np.ndarray:
        """Flattened gains of communication interval n."""
        config = self.process.config
        while len(self._features) <= n:
            h = _slot_fading(config, self.rng)
            a = self._alphas
            gains = SlotGains(
                v2i=a["alpha_v2i"] * h[0],
                v2v=a["alpha_v2v"][:, None] * h[1],
                v2v_to_bs=a["alpha_v2v_to_bs"][:, None] * h[2],
                v2i_to_v2v=a["alpha_v2i_to_v2v"] * h[3],
                v2v_cross=a["alpha_v2v_cross"][:, :, None] * h[4],
            )
            self._features.append(gains.to_features())
        return self._features[n]

    def draw(self) -> np.ndarray:
        T = self.process.config.T_slots
        if self.process.kind == CommDecision.WHEN:
            k = self.index
            blocks = [self.features(k * T + t) for t in range(T)]
            w = np.concatenate([[k, 0.0], *blocks, self.features((k + 1) * T)])
        else:
            n = self.index
            k, t = divmod(n, T)
            w = np.concatenate([[k, t], self.features(n), self.features(n + 1)])
        self.index += 1
        return w


def _delivered(
    gains: Sequence[SlotGains], action: CommAction, phi: np.ndarray, config: NetworkConfig
) -> Tuple[np.ndarray, np.ndarray]:
    """V2I rates per slot and per-link delivery of one control interval's CAMs."""
    queues = [queue_step(CamQueue(), 0.0, config, 0, int(p)) for p in phi]
    v2i = np.zeros((len(gains), config.M))
    for t, g in enumerate(gains):
        rv = rates(g, action, phi, config)
        v2i[t] = rv.v2i
        queues = [queue_step(cq, rv.cam[i], config, t + 1) for i, cq in enumerate(queues)]
    delivered = np.array([cq.phi == 1 and cq.q == 0.0 for cq in queues])
    return v2i, delivered


def build_comm_ssdp(
    kind: Union[str, CommDecision],
    handles: CommHandles,
    ivoi_evaluator: Optional[IvoiEvaluator],
    config: NetworkConfig,
    allocation: Optional[CommAction] = None,
) -> SsdpSpec:
    """Communication decision process of one episode.

    when: one step per control interval; state {G_(k,0), signal_k}; action phi per
    V2V link (>= 0.5 transmits) with a fixed sub-channel allocation.

    how: one step per communication interval; state {G_(k,t), q, recent predecessor
    signals, t}; action [theta, P_V] flattened (see CommAction.from_vector). Every CAM
    is queued.

    Args:
        kind: "when" or "how"
        handles: Geometry and predecessor signal of the episode
        ivoi_evaluator: xi_{k+1} per link given (k, delivered flags)
        config: Network parameters; gamma_cm is the process discount
        allocation: Sub-channel allocation of the when-kind (CommAction.fixed by default)

    Returns:
        SsdpSpec whose exogenous process draws the channel

    Raises:
        EstimatorUnavailableError: If ivoi_evaluator is missing
    """
    if ivoi_evaluator is None:
        raise EstimatorUnavailableError(
            "communication rewards need an IVoI evaluator for the next control interval",
            estimator="ivoi_evaluator",
        )
    config.validate()
    kind = CommDecision(kind)
    M, L, T = config.M, config.L, config.T_slots
    F = SlotGains.feature_dim(M, L)
    exo = ChannelExoProcess(handles, config, kind)
    K = handles.horizon

    def gains_at(w: np.ndarray, block: int) -> SlotGains:
        return SlotGains.from_features(w[2 + block * F: 2 + (block + 1) * F], M, L)

    def xi(k: int, delivered: np.ndarray) -> np.ndarray:
        if k >= K - 1:
            return np.zeros(L)
        return np.asarray(ivoi_evaluator(k, delivered), dtype=float)

    if kind == CommDecision.WHEN:
        action = allocation or CommAction.fixed(config)
        action.validate(config)

        def when_transition(s: np.ndarray, a: np.ndarray, w: np.ndarray) -> np.ndarray:
            k = int(w[0])
            return np.concatenate([w[2 + T * F:], handles.signal_at(k + 1)])

        def when_reward(s: np.ndarray, a: np.ndarray, w: np.ndarray) -> float:
            k = int(w[0])
            phi = (np.asarray(a, dtype=float) >= 0.5).astype(float)
            v2i, delivered = _delivered([gains_at(w, t) for t in range(T)], action, phi, config)
            return comm_reward_when(v2i, xi(k, delivered), config)

        def when_init(rng: np.random.Generator, stream: Any) -> np.ndarray:
            return np.concatenate([stream.features(0), handles.signal_at(0)])

        return SsdpSpec(
            state_dim=F + L,
            action_dim=L,
            transition=when_transition,
            reward=when_reward,
            exo_process=exo,
            gamma=config.gamma_cm,
            horizon=K,
            action_low=np.zeros(L),
            action_high=np.ones(L),
            initializer=when_init,
            name="comm_when",
        )

    q_slice = slice(F, F + L)
    recent_dim = L * handles.tau_max

    def how_state(k: int, t: int, g: np.ndarray, q: np.ndarray) -> np.ndarray:
        return np.concatenate([g, q, handles.recent(k), [float(t)]])

    def how_slot(s: np.ndarray, a: np.ndarray, w: np.ndarray) -> Tuple[RateVectors, np.ndarray]:
        t = int(w[1])
        action = CommAction.from_vector(a, config)
        phi = np.ones(L)
        rv = rates(gains_at(w, 0), action, phi, config)
        q = np.array([
            queue_step(CamQueue(q=float(np.clip(s[q_slice][i], 0.0, 1.0)), phi=1), rv.cam[i],
                       config, t + 1).q
            for i in range(L)
        ])
        return rv, q

    def how_transition(s: np.ndarray, a: np.ndarray, w: np.ndarray) -> np.ndarray:
        k, t = int(w[0]), int(w[1])
        _, q = how_slot(s, a, w)
        if t + 1 == T:
            return how_state(k + 1, 0, w[2 + F:], np.ones(L))
        return how_state(k, t + 1, w[2 + F:], q)

    def how_reward(s: np.ndarray, a: np.ndarray, w: np.ndarray) -> float:
        k, t = int(w[0]), int(w[1])
        rv, q = how_slot(s, a, w)
        ivoi_next = xi(k, q == 0.0) if t == T - 1 else np.zeros(L)
        return comm_reward_how(rv.v2i, t, ivoi_next, config).total

    def how_init(rng: np.random.Generator, stream: Any) -> np.ndarray:
        return how_state(0, 0, stream.features(0), np.ones(L))

    low = np.zeros(2 * L * M)
    high = np.concatenate([np.ones(L * M), np.full(L * M, config.P_V_max)])
    return SsdpSpec(
        state_dim=F + L + recent_dim + 1,
        action_dim=2 * L * M,
        transition=how_transition,
        reward=how_reward,
        exo_process=exo,
        gamma=config.gamma_cm,
        horizon=K * T,
        action_low=low,
        action_high=high,
        initializer=how_init,
        name="comm_how",
    )


# ==================== Closed-loop simulation ====================


@dataclass
class ControlLoop:
    """Follower control that scores each link's communication outcome.

    Attributes:
        trajectories: Predecessor trace of every V2V link
        pi_sup: Reference policy on the full state [e_p, e_v, acc, acc_pred]
        critic: Advantage access for pi_sup (advantage(s, a))
        pi_inf: Policy on the received observation; pi_sup applied to the first four
            observation entries when None
        fallback: Receiver behaviour when the last CAM was lost
    """

    trajectories: Sequence[PredecessorTrajectory]
    pi_sup: Policy
    critic: Any
    pi_inf: Optional[Policy] = None
    params: VehicleParams = field(default_factory=VehicleParams)
    weights: RewardWeights = field(default_factory=RewardWeights)
    horizon: int = 500
    gamma: float = 0.95
    fallback: ReceiverFallback = ReceiverFallback.DUMMY
    rho_pred: float = 0.125
    pred_signal: str = "u_pred"

    def inferior_action(self, obs: np.ndarray) -> np.ndarray:
        if self.pi_inf is not None:
            return np.asarray(self.pi_inf(obs), dtype=float)
        return np.asarray(self.pi_sup(obs[:ACC_PRED_SLOT + 1]), dtype=float)


SLOT_REWARD_COLUMNS = ["reward_throughput", "reward_voi"]


@dataclass
class CommRun:
    """Logs and returns of one closed-loop communication episode."""

    policy_name: str
    config: NetworkConfig

    # One row per communication interval
    slot_log: pd.DataFrame

    # One row per control interval
    interval_log: pd.DataFrame

    # Follower episodes on received information, and the reference episodes
    control_logs: List[pd.DataFrame]
    reference_logs: List[pd.DataFrame]

    # Discounted returns per link
    returns_inf: np.ndarray
    returns_sup: np.ndarray

    # IVoI xi_k per control interval and link, shape (K, L)
    ivoi: np.ndarray

    @property
    def evoi(self) -> np.ndarray:
        """J_inf - J_sup per link."""
        return self.returns_inf - self.returns_sup

    @property
    def discounted_throughput(self) -> float:
        return discounted_throughput(self.slot_log, self.config)

    @property
    def jcm(self) -> float:
        return objective_jcm(self.slot_log, self.config, self.evoi)

    @property
    def transmissions(self) -> int:
        cols = [c for c in self.interval_log.columns if c.startswith("phi_")]
        return int(self.interval_log[cols].to_numpy().sum())

    @property
    def rms_e_p(self) -> float:
        """RMS position error over all followers on received information."""
        e_p = np.concatenate([log["e_p"].to_numpy() for log in self.control_logs])
        return float(np.sqrt(np.mean(e_p ** 2))) if e_p.size else 0.0

    def slot_rewards(self, k: int) -> List[SlotReward]:
        rows = self.slot_log[self.slot_log["k"] == k]
        return [SlotReward(throughput=float(a), voi=float(b))
                for a, b in zip(rows["reward_throughput"], rows["reward_voi"])]

    def summary(self) -> Dict[str, Any]:
        kappa1, kappa2 = self.config.kappa1, self.config.kappa2
        return {
            "policy": self.policy_name,
            "discounted_throughput": self.discounted_throughput,
            "throughput_term": kappa1 * self.discounted_throughput,
            "evoi": self.evoi.tolist(),
            "voi_term": kappa2 * float(np.sum(self.evoi)),
            "jcm": self.jcm,
            "transmissions": self.transmissions,
            "rms_e_p": self.rms_e_p,
            "return_inf": self.returns_inf.tolist(),
            "return_sup": self.returns_sup.tolist(),
        }


def _control_episode(
    env: VehicleFollowingEnv,
    act: Callable[[VehicleFollowingEnv, np.ndarray], np.ndarray],
    seed: int,
    critic: Any = None,
) -> Tuple[float, np.ndarray, pd.DataFrame]:
    s = env.reset(seed=seed)
    total, discount = 0.0, 1.0
    xi = np.zeros(env.horizon)
    done, k = False, 0
    while not done:
        a = act(env, s)
        if critic is not None:
            xi[k] = float(critic.advantage(s, a))
        s, r, done, _ = env.step(a)
        total += discount * r
        discount *= env.gamma
        k += 1
    return total, xi, env.episode_frame()


def _slot_columns(M: int, L: int) -> List[str]:
    cols = ["k", "t"]
    cols += [f"sinr_v2i_{m}" for m in range(M)]
    cols += [f"sinr_v2v_{i}" for i in range(L)]
    cols += [f"rate_v2i_{m}" for m in range(M)]
    for name in ("rate_v2v", "cam_rate", "q", "phi", "tau"):
        cols += [f"{name}_{i}" for i in range(L)]
    return cols + SLOT_REWARD_COLUMNS


def _interval_columns(L: int) -> List[str]:
    cols = ["k"]
    for name in ("phi", "delivered", "tau_next", "acc_pred", "u_pred", "xi_next"):
        cols += [f"{name}_{i}" for i in range(L)]
    return cols + ["v2i_throughput", "reward_throughput", "reward_voi", "when_reward"]


def simulate(
    when_policy: Callable[[CommContext], Any],
    control: ControlLoop,
    config: NetworkConfig,
    geometry: LinkGeometry,
    seed: int = 0,
    how_policy: Optional[HowPolicy] = None,
) -> CommRun:
    """Run one episode of communication and follower control.

    The channel does not depend on the control task, so the communication layer runs
    first and yields each link's delay schedule. Each follower then drives on the
    received information (its IVoI recorded along the way) and, from the same initial
    state, on full information for the reference return.

    Args:
        when_policy: Maps the CommContext of interval k to phi per link
        control: Follower control and predecessor traces
        config: Network parameters
        geometry: Link distances
        seed: Episode seed; two policies run with the same seed see the same channel
        how_policy: Slot-level allocation; CommAction.fixed when None

    Returns:
        CommRun

    Raises:
        EstimatorUnavailableError: If control has no critic
        ContractViolationError: If the number of traces differs from L
    """
    config.validate()
    geometry.validate(config)
    if control.critic is None:
        raise EstimatorUnavailableError("the control loop needs a critic for pi_sup",
                                        estimator="critic")
    M, L, T, K = config.M, config.L, config.T_slots, control.horizon
    if len(control.trajectories) != L:
        raise ContractViolationError(
            f"{len(control.trajectories)} predecessor traces for {L} V2V links", module=MODULE
        )
    for traj in control.trajectories:
        if len(traj) < K:
            raise ValidationError(f"predecessor trace has {len(traj)} samples, horizon is {K}")

    channel_seed, env_seed = derive_seeds(seed, 2)
    cs = sample_channel(geometry, config, seed=channel_seed, n_intervals=K)
    acc = np.stack([np.asarray(tr.acc[:K], dtype=float) for tr in control.trajectories], axis=1)
    u = np.stack([recover_inputs(tr.acc, tr.T, control.rho_pred)[:K]
                  for tr in control.trajectories], axis=1)
    fixed = CommAction.fixed(config)
    name = getattr(when_policy, "name", type(when_policy).__name__)

    queues = [CamQueue() for _ in range(L)]
    tau = np.ones(L, dtype=int)
    delays = np.ones((K, L), dtype=int)
    phis = np.zeros((K, L), dtype=int)
    delivered = np.zeros((K, L), dtype=bool)
    v2i = np.zeros((K, T, M))
    slot_rows: List[List[float]] = []
    for k in range(K):
        delays[k] = tau
        ctx = CommContext(k=k, gains=cs.slot(k * T), acc_pred=acc[k], u_pred=u[k],
                          tau=tau.copy(), pred_signal=control.pred_signal)
        phi = (_phi(when_policy(ctx), L) >= 0.5).astype(int)
        phis[k] = phi
        queues = [queue_step(cq, 0.0, config, 0, int(phi[i])) for i, cq in enumerate(queues)]
        for t in range(T):
            action = fixed if how_policy is None else how_policy(ctx, t, queues)
            rv = rates(cs, action, phi, config, n=k * T + t)
            v2i[k, t] = rv.v2i
            queues = [queue_step(cq, rv.cam[i], config, t + 1) for i, cq in enumerate(queues)]
            slot_rows.append([
                k, t, *rv.sinr_v2i, *rv.sinr_v2v, *rv.v2i, *rv.v2v, *rv.cam,
                *[cq.q for cq in queues], *phi, *tau,
            ])
        tau = np.array([delay_step(cq) for cq in queues])
        delivered[k] = tau == 1
        queues = [dataclasses.replace(cq, tau=int(tau[i])) for i, cq in enumerate(queues)]

    returns_inf, returns_sup = np.zeros(L), np.zeros(L)
    ivoi = np.zeros((K, L))
    control_logs, reference_logs = [], []
    for i, (traj, link_seed) in enumerate(zip(control.trajectories, derive_seeds(env_seed, L))):
        tau_max = int(delays[:, i].max())
        model = ObservationModel.last_received(tau_max, fallback=control.fallback)
        env = VehicleFollowingEnv(traj, control.params, control.weights, horizon=K,
                                  gamma=control.gamma, tau_max=tau_max, delays=delays[:, i])
        returns_inf[i], ivoi[:, i], frame = _control_episode(
            env, lambda e, s: control.inferior_action(e.observation(model)), link_seed,
            control.critic,
        )
        control_logs.append(frame)
        ref = VehicleFollowingEnv(traj, control.params, control.weights, horizon=K,
                                  gamma=control.gamma)
        returns_sup[i], _, ref_frame = _control_episode(
            ref, lambda e, s: np.asarray(control.pi_sup(s), dtype=float), link_seed
        )
        reference_logs.append(ref_frame)

    xi_next = np.zeros((K, L))
    xi_next[:-1] = ivoi[1:]
    slot_cols = _slot_columns(M, L)
    for row in slot_rows:
        k, t = int(row[0]), int(row[1])
        r = comm_reward_how(v2i[k, t], t, xi_next[k], config)
        row.extend([r.throughput, r.voi])
    slot_log = pd.DataFrame(slot_rows, columns=slot_cols)
    for col in ("k", "t", *[f"phi_{i}" for i in range(L)], *[f"tau_{i}" for i in range(L)]):
        slot_log[col] = slot_log[col].astype(int)

    interval_rows = []
    w = discount_weights(config.gamma_cm, T)
    for k in range(K):
        throughput = float(np.dot(w, config.kappa1 * v2i[k].sum(axis=1)))
        voi = config.kappa2 * float(np.sum(xi_next[k]))
        interval_rows.append([
            k, *phis[k], *delivered[k].astype(int), *(delays[k + 1] if k + 1 < K else tau),
            *acc[k], *u[k], *xi_next[k], float(v2i[k].sum(axis=1).mean()), throughput, voi,
            comm_reward_when(v2i[k], xi_next[k], config),
        ])
    interval_log = pd.DataFrame(interval_rows, columns=_interval_columns(L))

    run = CommRun(
        policy_name=name,
        config=config,
        slot_log=slot_log,
        interval_log=interval_log,
        control_logs=control_logs,
        reference_logs=reference_logs,
        returns_inf=returns_inf,
        returns_sup=returns_sup,
        ivoi=ivoi,
    )
    logger.debug("comm episode %s seed=%d: jcm=%.6g transmissions=%d", name, seed, run.jcm,
                 run.transmissions)
    return run


def static_decision_eval(
    candidates: Union[Mapping[str, Callable[[CommContext], Any]], Iterable[str]],
    control: ControlLoop,
    config: NetworkConfig,
    geometry: LinkGeometry,
    n_episodes: int,
    seed: int = 0,
    workers: Optional[int] = None,
) -> List[DecisionScore]:
    """Rank fixed communication decisions by J^CM.

    Every candidate runs the same n_episodes seeds, so candidates see identical
    channels and initial states.

    Args:
        candidates: Named policies, or names among "always", "gated", "never"
        control: Follower control used for the EVoI term
        config: Network parameters
        geometry: Link distances
        n_episodes: Seeded episodes per candidate
        seed: Parent seed
        workers: Thread count; CAV_VOI_MAX_WORKERS when None

    Returns:
        Scores sorted best first (ties keep candidate order)

    Raises:
        ValidationError: On an empty candidate set, unknown name or n_episodes < 1
    """
    if isinstance(candidates, Mapping):
        policies = dict(candidates)
    else:
        policies = {}
        for cand in candidates:
            if cand not in NAMED_POLICIES:
                raise ValidationError(f"unknown communication decision {cand!r}")
            policies[cand] = NAMED_POLICIES[cand](n_links=config.L)
    if not policies:
        raise ValidationError("static_decision_eval needs at least one candidate")
    if n_episodes < 1:
        raise ValidationError(f"n_episodes must be >= 1, got {n_episodes}")
    seeds = derive_seeds(seed, n_episodes)
    jobs = [(name, policy, s) for name, policy in policies.items() for s in seeds]
    n_workers = workers if workers is not None else max_workers()

    def run_job(job: Tuple[str, Any, int]) -> CommRun:
        _, policy, s = job
        return simulate(policy, control, config, geometry, seed=s)

    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        runs = list(pool.map(run_job, jobs))

    scores = []
    for c, name in enumerate(policies):
        chunk = runs[c * n_episodes:(c + 1) * n_episodes]
        values = np.array([run.jcm for run in chunk])
        mean, _, ci = mean_ci(values)
        scores.append(DecisionScore(
            name=name,
            jcm=mean,
            ci=ci,
            throughput=float(np.mean([run.discounted_throughput for run in chunk])),
            evoi=float(np.mean([np.sum(run.evoi) for run in chunk])),
            n_episodes=n_episodes,
            per_episode=values.tolist(),
        ))
        logger.info("decision %s: J_CM=%.6g (95%% CI %.6g .. %.6g)", name, mean, ci[0], ci[1])
    order = sorted(range(len(scores)), key=lambda j: -scores[j].jcm)
    return [scores[j] for j in order]
