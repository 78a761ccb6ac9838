"""Vehicle-following control: longitudinal dynamics, CTHP headway, reward, observations.

The follower state is x = [e_p, e_v, acc] and evolves by forward Euler as
x' = A x + B u + C acc_pred with

    A = [[1, T, -hT], [0, 1, -T], [0, 0, 1 - T/rho]],  B = [0, 0, T/rho],  C = [0, T, 0].

The predecessor's acceleration follows the same first-order driveline model,
acc' = (1 - T/rho) acc + (T/rho) u. The factor T is kept in both coefficients so the
predecessor recurrence matches the follower's acceleration row of A and B.
"""

import copy
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from cav.voi.data.enums import ObservationKind, ReceiverFallback
from cav.voi.data.params import RewardWeights, VehicleParams
from cav.voi.exceptions import ContractViolationError, ValidationError
from cav.voi.ssdp import ExoProcess, SsdpSpec
from cav.voi.utils import make_rng, write_frame

logger = logging.getLogger(__name__)

MODULE = "vehicle-env"

STATE_NAMES = ("e_p", "e_v", "acc")
AUGMENTED_STATE_NAMES = ("e_p", "e_v", "acc", "acc_pred")

# Index of the predecessor acceleration in the augmented state
ACC_PRED_SLOT = 3

EPISODE_COLUMNS = ["k", "e_p", "e_v", "acc", "u", "acc_pred", "r"]


@dataclass(frozen=True)
class VehicleState:
    """Follower control errors and acceleration."""

    e_p: float
    e_v: float
    acc: float

    # Acceleration was clamped to acc_max on the step that produced this state
    clamped: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.e_p, self.e_v, self.acc], dtype=float)

    @classmethod
    def from_array(cls, x: Sequence[float], clamped: bool = False) -> "VehicleState":
        x = np.asarray(x, dtype=float).ravel()
        return cls(float(x[0]), float(x[1]), float(x[2]), clamped)


StateLike = Union[VehicleState, Sequence[float], np.ndarray]


def _vec(x: StateLike) -> np.ndarray:
    if isinstance(x, VehicleState):
        return x.as_array()
    arr = np.asarray(x, dtype=float).ravel()
    if arr.shape[0] < 3:
        raise ContractViolationError(f"vehicle state needs 3 entries, got {arr.shape[0]}",
                                     module=MODULE)
    return arr[:3]


# ==================== Dynamics ====================


def dynamics_step(x: StateLike, u: float, acc_pred: float, p: VehicleParams) -> VehicleState:
    """Advance the follower one control interval.

    Args:
        x: Current state [e_p, e_v, acc]
        u: Control input (m/s^2)
        acc_pred: Predecessor acceleration (m/s^2)
        p: Vehicle parameters

    Returns:
        Next VehicleState; acc is clamped to +-acc_max and the clamp is flagged
    """
    A, B, C = p.matrices()
    nxt = A @ _vec(x) + B * float(u) + C * float(acc_pred)
    clamped = bool(abs(nxt[2]) > p.acc_max)
    if clamped:
        nxt[2] = float(np.clip(nxt[2], -p.acc_max, p.acc_max))
    return VehicleState.from_array(nxt, clamped)


def predecessor_acc_step(acc_prev: float, u_prev: float, p_pred: VehicleParams) -> float:
    """(1 - T/rho) acc_prev + (T/rho) u_prev."""
    ratio = p_pred.T / p_pred.rho
    return (1.0 - ratio) * float(acc_prev) + ratio * float(u_prev)


def desired_headway(v: float, p: VehicleParams) -> float:
    """Constant time-headway distance sigma + h v."""
    return p.sigma + p.h * float(v)


def headway(p_pred: float, p_follow: float, L_pred: float) -> float:
    """Bumper-to-bumper gap d = p_pred - p - L."""
    return float(p_pred) - float(p_follow) - float(L_pred)


def control_errors(d: float, d_sigma: float, v_pred: float, v: float) -> Tuple[float, float]:
    """Position and velocity errors (d - d_sigma, v_pred - v)."""
    return float(d) - float(d_sigma), float(v_pred) - float(v)


def reward(x: StateLike, u: float, p: VehicleParams, w: RewardWeights) -> float:
    """Negative weighted sum of normalized error, input and jerk magnitudes.

    With huber_delta set, a normalized magnitude below the threshold is squared before
    weighting.
    """
    e_p, e_v, acc = _vec(x)
    jerk = (float(u) - acc) / p.rho
    terms = np.abs(
        np.array(
            [
                e_p / w.e_p_max_hat,
                e_v / w.e_v_max_hat,
                float(u) / p.u_max,
                jerk / (2.0 * p.acc_max / p.T),
            ]
        )
    )
    if w.huber_delta is not None:
        terms = np.where(terms < w.huber_delta, terms ** 2, terms)
    weights = np.array([1.0, w.a, w.b, w.c])
    return -float(np.dot(weights, terms))


# ==================== Observations ====================


@dataclass(frozen=True)
class ObservationModel:
    """What the follower sees of the predecessor acceleration.

    Example:
        model = ObservationModel.last_received(tau_max=3)
    """

    kind: ObservationKind = ObservationKind.FULL

    # Value written into the predecessor slot when nothing is known
    dummy_value: float = 0.0

    # Largest admissible observation delay (control intervals)
    tau_max: int = 1

    # With last_received: a stale slot (tau > 1) reads the dummy instead
    fallback: ReceiverFallback = ReceiverFallback.LAST_RECEIVED

    @classmethod
    def full(cls) -> "ObservationModel":
        return cls(ObservationKind.FULL)

    @classmethod
    def missing(cls, dummy_value: float = 0.0) -> "ObservationModel":
        return cls(ObservationKind.MISSING_DUMMY, dummy_value=dummy_value)

    @classmethod
    def last_received(
        cls,
        tau_max: int,
        fallback: ReceiverFallback = ReceiverFallback.LAST_RECEIVED,
        dummy_value: float = 0.0,
    ) -> "ObservationModel":
        if tau_max < 1:
            raise ContractViolationError(f"tau_max must be >= 1, got {tau_max}", module=MODULE)
        return cls(ObservationKind.LAST_RECEIVED, dummy_value=dummy_value, tau_max=tau_max,
                   fallback=ReceiverFallback(fallback))

    def observation_dim(self, state_dim: int = 4) -> int:
        if self.kind == ObservationKind.LAST_RECEIVED:
            return state_dim + self.tau_max + 1
        return state_dim


@dataclass
class ObservationHistory:
    """Predecessor samples and own actions seen so far in an episode."""

    samples: List[float] = field(default_factory=list)
    actions: List[float] = field(default_factory=list)

    def record_sample(self, acc_pred: float) -> None:
        self.samples.append(float(acc_pred))

    def record_action(self, u: float) -> None:
        self.actions.append(float(u))

    def sample(self, tau: int) -> Optional[float]:
        """Predecessor sample taken tau intervals before the newest one."""
        idx = len(self.samples) - 1 - tau
        return self.samples[idx] if idx >= 0 else None

    def recent_actions(self, n: int) -> np.ndarray:
        """The n newest actions, oldest first, zero-padded at the front."""
        out = np.zeros(n)
        recent = self.actions[-n:] if n else []
        if recent:
            out[n - len(recent):] = recent
        return out


def observe(
    true_state: Sequence[float],
    model: ObservationModel,
    history: Optional[ObservationHistory] = None,
    tau: Optional[int] = None,
) -> np.ndarray:
    """Map the true augmented state [e_p, e_v, acc, acc_pred] to an observation.

    Args:
        true_state: Augmented state
        model: Observation model
        history: Required for last_received
        tau: Current observation delay, required for last_received

    Returns:
        full: the state itself; missing_dummy: the predecessor slot replaced by the
        dummy; last_received: the state with the stale slot, followed by the tau_max
        newest actions and tau

    Raises:
        ContractViolationError: If tau is outside [1, tau_max] or history is missing
    """
    obs = np.asarray(true_state, dtype=float).ravel().copy()
    if model.kind == ObservationKind.FULL:
        return obs
    if model.kind == ObservationKind.MISSING_DUMMY:
        obs[ACC_PRED_SLOT] = model.dummy_value
        return obs
    if history is None or tau is None:
        raise ContractViolationError("last_received observations need history and tau",
                                     module=MODULE)
    if tau < 1 or tau > model.tau_max:
        raise ContractViolationError(f"delay tau={tau} outside [1, {model.tau_max}]",
                                     module=MODULE)
    stale = history.sample(tau)
    if stale is None or (tau > 1 and model.fallback == ReceiverFallback.DUMMY):
        stale = model.dummy_value
    obs[ACC_PRED_SLOT] = stale
    return np.concatenate([obs, history.recent_actions(model.tau_max), [float(tau)]])


# ==================== Scenario specs ====================


def _uniform_init(
    e_p_range: Tuple[float, float], e_v_range: Tuple[float, float], extra: int
) -> Callable[[np.random.Generator], np.ndarray]:
    def init(rng: np.random.Generator) -> np.ndarray:
        e_p = rng.uniform(*e_p_range)
        e_v = rng.uniform(*e_v_range)
        return np.concatenate([[e_p, e_v, 0.0], np.zeros(extra)])

    return init


def _pred_inputs(
    support: Sequence[float], probs: Optional[Sequence[float]]
) -> Tuple[np.ndarray, np.ndarray]:
    sup = np.asarray(support, dtype=float).ravel()
    p = np.full(sup.size, 1.0 / sup.size) if probs is None else np.asarray(probs, dtype=float)
    return sup, p


def build_case2_spec(
    params: Optional[VehicleParams] = None,
    weights: Optional[RewardWeights] = None,
    gamma: float = 0.95,
    horizon: Optional[int] = 500,
    u_pred_support: Sequence[float] = (-3.0, -1.5, 0.0, 1.5, 3.0),
    u_pred_probs: Optional[Sequence[float]] = None,
    rho_pred: float = 0.125,
    trajectory: Any = None,
    e_p_range: Tuple[float, float] = (-2.0, 2.0),
    e_v_range: Tuple[float, float] = (-1.0, 1.0),
) -> SsdpSpec:
    """Follower state [e_p, e_v, acc] driven by the predecessor acceleration.

    The exogenous information is acc_pred,k. Its predictor is
    (acc_pred,k-1, u_pred,k-1) with u_pred drawn iid, so the state alone is not
    Markov. With a trajectory the acceleration is replayed instead.
    """
    params = params or VehicleParams()
    weights = weights or RewardWeights()
    p_pred = VehicleParams(rho=rho_pred, T=params.T)
    sup, probs = _pred_inputs(u_pred_support, u_pred_probs)
    ratio = p_pred.T / p_pred.rho

    if trajectory is not None:
        exo = trajectory.as_exo_process()
    else:
        def f_w(wt: np.ndarray) -> np.ndarray:
            return np.array([predecessor_acc_step(wt[0], wt[1], p_pred)])

        def wtilde_init(rng: np.random.Generator) -> np.ndarray:
            return np.array([0.0, sup[rng.choice(sup.size, p=probs)]])

        def wtilde_transition(wt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            acc = f_w(wt)[0]
            return np.column_stack([np.full(sup.size, acc), sup]), probs

        def next_w_given_w(w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
            return ((1.0 - ratio) * float(w[0]) + ratio * sup).reshape(-1, 1), probs

        exo = ExoProcess.driven(
            wtilde_dim=2,
            wtilde_init=wtilde_init,
            f_w=f_w,
            wtilde_transition=wtilde_transition,
            next_w_given_w=next_w_given_w,
            history_dependent=True,
        )

    def transition(s: np.ndarray, a: np.ndarray, w: np.ndarray) -> np.ndarray:
        return dynamics_step(s, a[0], w[0], params).as_array()

    def step_reward(s: np.ndarray, a: np.ndarray, w: np.ndarray) -> float:
        return reward(s, a[0], params, weights)

    return SsdpSpec(
        state_dim=3,
        action_dim=1,
        transition=transition,
        reward=step_reward,
        exo_process=exo,
        gamma=gamma,
        horizon=horizon,
        action_low=np.array([-params.u_max]),
        action_high=np.array([params.u_max]),
        init_state=_uniform_init(e_p_range, e_v_range, 0),
        name="vehicle-case2",
        state_names=STATE_NAMES,
    )


def build_case4_spec(
    params: Optional[VehicleParams] = None,
    weights: Optional[RewardWeights] = None,
    gamma: float = 0.95,
    horizon: Optional[int] = 500,
    u_pred_support: Sequence[float] = (-3.0, -1.5, 0.0, 1.5, 3.0),
    u_pred_probs: Optional[Sequence[float]] = None,
    rho_pred: float = 0.125,
    e_p_range: Tuple[float, float] = (-2.0, 2.0),
    e_v_range: Tuple[float, float] = (-1.0, 1.0),
) -> SsdpSpec:
    """Follower state augmented with the predecessor acceleration.

    State [e_p, e_v, acc, acc_pred]; the exogenous information is the predecessor input
    u_pred, drawn iid, which makes the augmented state Markov.
    """
    params = params or VehicleParams()
    weights = weights or RewardWeights()
    p_pred = VehicleParams(rho=rho_pred, T=params.T)
    sup, probs = _pred_inputs(u_pred_support, u_pred_probs)

    def transition(s: np.ndarray, a: np.ndarray, w: np.ndarray) -> np.ndarray:
        x = dynamics_step(s[:3], a[0], s[3], params).as_array()
        return np.append(x, predecessor_acc_step(s[3], w[0], p_pred))

    def step_reward(s: np.ndarray, a: np.ndarray, w: np.ndarray) -> float:
        return reward(s[:3], a[0], params, weights)

    return SsdpSpec(
        state_dim=4,
        action_dim=1,
        transition=transition,
        reward=step_reward,
        exo_process=ExoProcess.iid(sup, probs),
        gamma=gamma,
        horizon=horizon,
        action_low=np.array([-params.u_max]),
        action_high=np.array([params.u_max]),
        init_state=_uniform_init(e_p_range, e_v_range, 1),
        markov_declared=True,
        name="vehicle-case4",
        state_names=AUGMENTED_STATE_NAMES,
    )


# ==================== Environment ====================


class VehicleFollowingEnv:
    """Follower tracking a recorded predecessor acceleration trace.

    Steps return the true augmented state [e_p, e_v, acc, acc_pred]. Inferior views
    come from observation(model), which uses the episode's history and the current
    observation delay. Delays come from a fixed schedule, a sampler, or default to 1.

    Example:
        env = VehicleFollowingEnv(trajectory=synth_stop_and_go(500))
        s = env.reset(seed=1)
        s, r, done, info = env.step(0.5)
    """

    action_dim = 1

    def __init__(
        self,
        trajectory: Any,
        params: Optional[VehicleParams] = None,
        weights: Optional[RewardWeights] = None,
        horizon: int = 500,
        gamma: float = 0.95,
        e_p_range: Tuple[float, float] = (-2.0, 2.0),
        e_v_range: Tuple[float, float] = (-1.0, 1.0),
        tau_max: int = 1,
        delay_sampler: Optional[Callable[[np.random.Generator], int]] = None,
        delays: Optional[Sequence[int]] = None,
    ):
        self.params = params or VehicleParams()
        self.weights = weights or RewardWeights()
        self.trace = np.asarray(trajectory.acc, dtype=float)
        if self.trace.shape[0] < horizon:
            raise ValidationError(
                f"predecessor trace has {self.trace.shape[0]} samples, horizon is {horizon}"
            )
        self.horizon = horizon
        self._gamma = gamma
        self.e_p_range = e_p_range
        self.e_v_range = e_v_range
        self.tau_max = tau_max
        self.delay_sampler = delay_sampler
        self.delays = None if delays is None else [int(t) for t in delays]
        self._rng: Optional[np.random.Generator] = None
        self._x = np.zeros(3)
        self.k = 0
        self.tau = 1
        self.history = ObservationHistory()
        self.clamp_count = 0
        self.capped_delays = 0
        self._log: List[List[float]] = []

    @property
    def gamma(self) -> float:
        return self._gamma

    @property
    def observation_dim(self) -> int:
        return 4

    @property
    def action_low(self) -> np.ndarray:
        return np.array([-self.params.u_max])

    @property
    def action_high(self) -> np.ndarray:
        return np.array([self.params.u_max])

    @property
    def state(self) -> np.ndarray:
        """True augmented state [e_p, e_v, acc, acc_pred]."""
        return np.append(self._x, self.trace[self.k] if self.k < self.trace.shape[0] else 0.0)

    def _next_tau(self) -> int:
        if self.delays is not None:
            tau = self.delays[self.k] if self.k < len(self.delays) else self.delays[-1]
        elif self.delay_sampler is not None:
            tau = int(self.delay_sampler(self._rng))
            if tau > self.tau + 1:
                self.capped_delays += 1
                logger.debug("step %d: delay draw %d capped to %d", self.k, tau, self.tau + 1)
                tau = self.tau + 1
        else:
            tau = 1
        if tau < 1 or tau > self.tau_max:
            raise ContractViolationError(f"delay tau={tau} outside [1, {self.tau_max}]",
                                         module=MODULE)
        return tau

    def reset(
        self, seed: Optional[int] = None, state: Optional[Sequence[float]] = None
    ) -> np.ndarray:
        self._rng = make_rng(seed)
        if state is not None:
            self._x = np.asarray(state, dtype=float).ravel()[:3].copy()
        else:
            self._x = np.array([
                self._rng.uniform(*self.e_p_range),
                self._rng.uniform(*self.e_v_range),
                0.0,
            ])
        self.k = 0
        self.tau = 1
        self.capped_delays = 0
        self.history = ObservationHistory()
        self.history.record_sample(self.trace[0])
        self.tau = self._next_tau()
        self.clamp_count = 0
        self._log = []
        return self.state

    def observation(self, model: ObservationModel) -> np.ndarray:
        """Current observation under model."""
        return observe(self.state, model, self.history, self.tau)

    def step(self, action: Any) -> Tuple[np.ndarray, float, bool, Dict[str, Any]]:
        u_raw = float(np.asarray(action, dtype=float).ravel()[0])
        u = float(np.clip(u_raw, -self.params.u_max, self.params.u_max))
        acc_pred = float(self.trace[self.k])
        s_prev = self.state
        r = reward(self._x, u, self.params, self.weights)
        nxt = dynamics_step(self._x, u, acc_pred, self.params)
        self.clamp_count += int(nxt.clamped)
        self._log.append([self.k, *self._x.tolist(), u, acc_pred, r])
        self._x = nxt.as_array()
        self.history.record_action(u)
        self.k += 1
        done = self.k >= self.horizon
        if not done:
            self.history.record_sample(self.trace[self.k])
            self.tau = self._next_tau()
        info = {"state": s_prev, "clamped": u != u_raw or nxt.clamped, "tau": self.tau}
        return self.state, r, done, info

    def snapshot(self) -> Dict[str, Any]:
        return {
            "x": self._x.copy(),
            "k": self.k,
            "tau": self.tau,
            "rng": copy.deepcopy(self._rng),
            "history": copy.deepcopy(self.history),
            "log": len(self._log),
        }

    def restore(self, snap: Dict[str, Any], seed: Optional[int] = None) -> np.ndarray:
        self._x = snap["x"].copy()
        self.k = snap["k"]
        self.tau = snap["tau"]
        self._rng = make_rng(seed) if seed is not None else copy.deepcopy(snap["rng"])
        self.history = copy.deepcopy(snap["history"])
        self._log = self._log[: snap["log"]]
        return self.state

    def episode_frame(self) -> pd.DataFrame:
        """Episode log with columns k, e_p, e_v, acc, u, acc_pred, r."""
        frame = pd.DataFrame(self._log, columns=EPISODE_COLUMNS)
        frame["k"] = frame["k"].astype(int)
        return frame

    def write_episode_log(self, path: str) -> str:
        return write_frame(self.episode_frame(), path)
