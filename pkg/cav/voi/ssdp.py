"""Sequential stochastic decision processes.

An SSDP is a tuple (S, a, W, f^S, r, f^W, gamma): the next state and the reward depend
on exogenous information W_k that is not available when a_k is chosen. This module
holds the process description, its exogenous-information sources, the three state
augmentations (with W_k, with the predictor W~_k, random delay), seeded rollouts and
the Markov property check.
"""

import copy
import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from cav.voi.data.enums import AugmentationKind, ExoKind
from cav.voi.data.records import MarkovReport
from cav.voi.data.tables import StateGrid
from cav.voi.data.trajectory import Trajectory, TransitionRecord
from cav.voi.exceptions import ContractViolationError, UnsupportedError
from cav.voi.utils import as_vector, discount_weights, make_rng

logger = logging.getLogger(__name__)

MODULE = "ssdp-core"

TransitionFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
RewardFn = Callable[[np.ndarray, np.ndarray, np.ndarray], float]
Policy = Callable[[np.ndarray], Any]
Distribution = Tuple[np.ndarray, np.ndarray]


# ==================== Exogenous information ====================


@dataclass(frozen=True, eq=False)
class ExoProcess:
    """Source of exogenous information W_k.

    Use the constructors rather than the raw fields:

    - ``ExoProcess.iid(support, probs)``: enumerable iid draws
    - ``ExoProcess.iid_sampler(sampler, w_dim)``: continuous iid draws
    - ``ExoProcess.driven(...)``: W_k = f^W(W~_k), W~_{k+1} drawn given W~_k
    - ``ExoProcess.from_trace(values)``: replay of a recorded sequence
    """

    kind: ExoKind
    w_dim: int = 1

    # iid
    support: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None
    sampler: Optional[Callable[[np.random.Generator], np.ndarray]] = None

    # driven
    wtilde_dim: int = 0
    wtilde_init: Optional[Callable[[np.random.Generator], np.ndarray]] = None
    wtilde_step: Optional[
        Callable[[np.ndarray, np.ndarray, np.random.Generator], np.ndarray]
    ] = None
    wtilde_transition: Optional[Callable[[np.ndarray], Distribution]] = None
    next_w_given_w: Optional[Callable[[np.ndarray], Distribution]] = None
    f_w: Optional[Callable[[np.ndarray], np.ndarray]] = None
    history_dependent: Optional[bool] = None

    # trace
    trace: Optional[np.ndarray] = None
    loop_trace: bool = False

    # Streams emit W~_k instead of W_k (predictor augmentation)
    emit_predictor: bool = False
    base_w_dim: Optional[int] = None

    @classmethod
    def iid(cls, support: Sequence[Any], probs: Optional[Sequence[float]] = None) -> "ExoProcess":
        """Enumerable iid process over the rows of support.

        Args:
            support: Outcomes, one per row (scalars allowed)
            probs: Outcome probabilities (uniform when omitted)
        """
        sup = np.asarray(support, dtype=float)
        if sup.ndim == 1:
            sup = sup.reshape(-1, 1)
        if sup.shape[0] == 0:
            raise ContractViolationError("iid support is empty", module=MODULE)
        p = (np.full(sup.shape[0], 1.0 / sup.shape[0]) if probs is None
             else np.asarray(probs, dtype=float))
        if p.shape != (sup.shape[0],) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ContractViolationError("iid probs must be a distribution over support",
                                         module=MODULE)
        return cls(kind=ExoKind.IID, w_dim=sup.shape[1], support=sup, probs=p)

    @classmethod
    def constant(cls, value: Any) -> "ExoProcess":
        """Degenerate iid process that always yields value."""
        return cls.iid([np.atleast_1d(np.asarray(value, dtype=float))], [1.0])

    @classmethod
    def iid_sampler(
        cls, sampler: Callable[[np.random.Generator], np.ndarray], w_dim: int = 1
    ) -> "ExoProcess":
        """Continuous iid process drawn by sampler(rng)."""
        return cls(kind=ExoKind.IID, w_dim=w_dim, sampler=sampler)

    @classmethod
    def driven(
        cls,
        wtilde_dim: int,
        wtilde_init: Callable[[np.random.Generator], np.ndarray],
        f_w: Callable[[np.ndarray], np.ndarray],
        wtilde_step: Optional[
            Callable[[np.ndarray, np.ndarray, np.random.Generator], np.ndarray]
        ] = None,
        wtilde_transition: Optional[Callable[[np.ndarray], Distribution]] = None,
        next_w_given_w: Optional[Callable[[np.ndarray], Distribution]] = None,
        w_dim: int = 1,
        history_dependent: Optional[bool] = None,
    ) -> "ExoProcess":
        """Process with W_k = f_w(W~_k).

        Args:
            wtilde_dim: Dimension of the predictor W~_k
            wtilde_init: Draws W~_0
            f_w: The exogenous information function
            wtilde_step: Draws W~_{k+1} from (W~_k, W_k, rng)
            wtilde_transition: Enumerable law of W~_{k+1} given W~_k, as (support, probs)
            next_w_given_w: Enumerable law of W_{k+1} given W_k, when it exists
            w_dim: Dimension of W_k
            history_dependent: Declared dependence of W~_k on past draws (None: unknown)

        Raises:
            ContractViolationError: If neither wtilde_step nor wtilde_transition is given
        """
        if wtilde_step is None and wtilde_transition is None:
            raise ContractViolationError(
                "driven process needs wtilde_step or wtilde_transition", module=MODULE
            )
        return cls(
            kind=ExoKind.DRIVEN,
            w_dim=w_dim,
            wtilde_dim=wtilde_dim,
            wtilde_init=wtilde_init,
            wtilde_step=wtilde_step,
            wtilde_transition=wtilde_transition,
            next_w_given_w=next_w_given_w,
            f_w=f_w,
            history_dependent=history_dependent,
        )

    @classmethod
    def from_trace(cls, values: Sequence[Any], loop: bool = False) -> "ExoProcess":
        """Replay values[k] at step k.

        Args:
            values: Recorded sequence (scalars or rows)
            loop: Wrap around instead of failing past the end
        """
        arr = np.asarray(values, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.shape[0] == 0:
            raise ContractViolationError("trace is empty", module=MODULE)
        return cls(kind=ExoKind.TRACE, w_dim=arr.shape[1], trace=arr, loop_trace=loop)

    @property
    def is_enumerable(self) -> bool:
        return self.kind == ExoKind.IID and self.support is not None

    @property
    def true_w_dim(self) -> int:
        """Dimension of W_k even when the stream emits W~_k."""
        return self.base_w_dim if self.base_w_dim is not None else self.w_dim

    @property
    def structurally_markov(self) -> Optional[bool]:
        """Whether W~_k is drawn without reference to the past, when declared."""
        if self.kind == ExoKind.IID:
            return True
        if self.kind == ExoKind.DRIVEN and self.history_dependent is not None:
            return not self.history_dependent
        return None

    def predictor_process(self) -> "ExoProcess":
        """The same process emitting W~_k instead of W_k."""
        if self.kind != ExoKind.DRIVEN:
            raise UnsupportedError(f"{self.kind.value} exogenous process has no predictor")
        return dataclasses.replace(
            self, emit_predictor=True, w_dim=self.wtilde_dim, base_w_dim=self.w_dim
        )

    def stream(self, rng: Optional[Union[int, np.random.Generator]] = None) -> "ExoStream":
        """Open a stateful stream of draws."""
        return ExoStream(self, make_rng(rng))


class ExoStream:
    """Stateful sequence of draws from one ExoProcess."""

    def __init__(self, process: ExoProcess, rng: np.random.Generator):
        self.process = process
        self.rng = rng
        self.k = 0
        self._wtilde: Optional[np.ndarray] = None
        if process.kind == ExoKind.DRIVEN:
            self._wtilde = as_vector(process.wtilde_init(rng), process.wtilde_dim,
                                     "W~_0", MODULE)

    @property
    def wtilde(self) -> Optional[np.ndarray]:
        """Current predictor W~_k (driven processes only)."""
        return None if self._wtilde is None else self._wtilde.copy()

    def draw(self) -> np.ndarray:
        """Return the next sample and advance."""
        proc = self.process
        if proc.kind == ExoKind.IID:
            if proc.support is not None:
                idx = self.rng.choice(proc.support.shape[0], p=proc.probs)
                w = proc.support[idx].copy()
            else:
                w = as_vector(proc.sampler(self.rng), proc.w_dim, "W_k", MODULE)
        elif proc.kind == ExoKind.DRIVEN:
            wt = self._wtilde
            w_true = as_vector(proc.f_w(wt), proc.true_w_dim, "W_k", MODULE)
            w = wt.copy() if proc.emit_predictor else w_true
            self._wtilde = self._advance(wt, w_true)
        else:
            n = proc.trace.shape[0]
            if self.k >= n and not proc.loop_trace:
                raise ContractViolationError(
                    f"trace exhausted after {n} draws", module=MODULE
                )
            w = proc.trace[self.k % n].copy()
        self.k += 1
        return w

    def _advance(self, wt: np.ndarray, w: np.ndarray) -> np.ndarray:
        proc = self.process
        if proc.wtilde_step is not None:
            nxt = proc.wtilde_step(wt, w, self.rng)
        else:
            support, probs = proc.wtilde_transition(wt)
            nxt = np.asarray(support, dtype=float)[self.rng.choice(len(probs), p=probs)]
        return as_vector(nxt, proc.wtilde_dim, "W~_k", MODULE)


class DelayedExoProcess:
    """Exogenous information of a random-delay SSDP.

    Each draw reveals the block of true exogenous values between the stale snapshot and
    the present, zero-padded to tau_max rows, followed by the next delay.
    """

    kind = ExoKind.DRIVEN
    history_dependent: Optional[bool] = None
    is_enumerable = False
    structurally_markov: Optional[bool] = None

    def __init__(self, base: Any, delay_process: ExoProcess, tau_max: int):
        self.base = base
        self.delay_process = delay_process
        self.tau_max = tau_max
        self.w_dim = tau_max * base.w_dim + 1

    def stream(self, rng: Optional[Union[int, np.random.Generator]] = None) -> "DelayedExoStream":
        rng = make_rng(rng)
        return DelayedExoStream(self, self.base.stream(rng), self.delay_process.stream(rng))


class DelayedExoStream:
    """Stream that tracks the true exogenous history behind a delayed snapshot."""

    def __init__(self, process: DelayedExoProcess, base_stream: Any, delay_stream: ExoStream):
        self.process = process
        self.base_stream = base_stream
        self.delay_stream = delay_stream
        self.k = 0
        self._history: List[np.ndarray] = []
        self._snapshot_index = 0
        self._tau = 1
        # Delay draws larger than tau + 1, replaced by tau + 1
        self.capped = 0

    @property
    def tau(self) -> int:
        return self._tau

    def first(self) -> np.ndarray:
        """Draw W_0 for the initial snapshot."""
        w0 = self.base_stream.draw()
        self._history = [w0]
        return w0

    def draw(self) -> np.ndarray:
        tau_max, w_dim = self.process.tau_max, self.process.base.w_dim
        j, tau = self._snapshot_index, self._tau
        while len(self._history) <= j + tau:
            self._history.append(self.base_stream.draw())
        block = np.zeros((tau_max, w_dim))
        block[:tau] = np.vstack(self._history[j + 1: j + tau + 1])
        raw = float(self.delay_stream.draw()[0])
        tau_next = int(round(raw))
        if tau_next < 1 or tau_next > tau_max:
            raise ContractViolationError(
                f"delay process emitted {raw!r}, outside [1, {tau_max}]", module=MODULE
            )
        if tau_next > tau + 1:
            self.capped += 1
            logger.debug("step %d: delay draw %d capped to %d", self.k, tau_next, tau + 1)
            tau_next = tau + 1
        self._snapshot_index = j + tau - tau_next + 1
        self._tau = tau_next
        self.k += 1
        return np.concatenate([block.ravel(), [float(tau_next)]])


# ==================== Process description ====================


@dataclass(frozen=True, eq=False)
class SsdpSpec:
    """A sequential stochastic decision process.

    Example:
        spec = SsdpSpec(
            state_dim=1, action_dim=1,
            transition=lambda s, a, w: s + a + w,
            reward=lambda s, a, w: -abs(s[0]),
            exo_process=ExoProcess.iid([-1, 1]),
            gamma=0.9, horizon=50,
        )
    """

    state_dim: int
    action_dim: int
    transition: TransitionFn
    reward: RewardFn
    exo_process: Any
    gamma: float = 0.99
    horizon: Optional[int] = None

    # Action box; policy outputs outside it are clamped
    action_low: Optional[np.ndarray] = None
    action_high: Optional[np.ndarray] = None

    # Initial state: sampler, enumerable support, or a custom initializer(rng, stream)
    init_state: Optional[Callable[[np.random.Generator], np.ndarray]] = None
    init_support: Optional[np.ndarray] = None
    init_probs: Optional[np.ndarray] = None
    initializer: Optional[Callable[[np.random.Generator, Any], np.ndarray]] = None

    # Enumerable law of the next exogenous sample given the state, when the exogenous
    # process is not iid but is Markov in the state
    exo_given_state: Optional[Callable[[np.ndarray], Distribution]] = None

    # Declared Markov property of the state process (overrides the exogenous declaration)
    markov_declared: Optional[bool] = None

    name: str = "ssdp"
    state_names: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ContractViolationError(f"gamma must be in [0, 1], got {self.gamma}",
                                         module=MODULE)
        if self.horizon is not None and self.horizon < 1:
            raise ContractViolationError(f"horizon must be >= 1, got {self.horizon}",
                                         module=MODULE)
        if self.horizon is None and self.gamma >= 1.0:
            raise ContractViolationError("unbounded specs require gamma < 1", module=MODULE)
        if self.state_dim < 1 or self.action_dim < 1:
            raise ContractViolationError("state_dim and action_dim must be >= 1", module=MODULE)

    def initial_state(self, rng: np.random.Generator, stream: Any = None) -> np.ndarray:
        """Draw S_0 (an initializer may also consume exogenous draws)."""
        if self.initializer is not None:
            s0 = self.initializer(rng, stream)
        elif self.init_support is not None:
            probs = self.init_probs
            if probs is None:
                probs = np.full(self.init_support.shape[0], 1.0 / self.init_support.shape[0])
            s0 = self.init_support[rng.choice(self.init_support.shape[0], p=probs)]
        elif self.init_state is not None:
            s0 = self.init_state(rng)
        else:
            s0 = np.zeros(self.state_dim)
        return as_vector(s0, self.state_dim, "S_0", MODULE)

    def initial_distribution(self) -> Optional[Distribution]:
        """Enumerable initial distribution (support, probs), if declared."""
        if self.init_support is None:
            return None
        support = np.asarray(self.init_support, dtype=float)
        probs = self.init_probs
        if probs is None:
            probs = np.full(support.shape[0], 1.0 / support.shape[0])
        return support, np.asarray(probs, dtype=float)

    def clamp(self, a: np.ndarray) -> Tuple[np.ndarray, bool]:
        """Clamp an action into the action box."""
        if self.action_low is None and self.action_high is None:
            return a, False
        low = -np.inf if self.action_low is None else self.action_low
        high = np.inf if self.action_high is None else self.action_high
        clamped = np.clip(a, low, high)
        return clamped, bool(np.any(clamped != a))


@dataclass(frozen=True, eq=False)
class AugmentedSpec:
    """Result of a state augmentation.

    ``spec`` is a complete SsdpSpec over the augmented state and can be passed anywhere
    an SsdpSpec is accepted.
    """

    base: SsdpSpec
    kind: AugmentationKind
    spec: SsdpSpec
    augmented_state_dim: int
    tau_max: Optional[int] = None
    delay_process: Optional[ExoProcess] = None
    extra: Dict[str, Any] = field(default_factory=dict)


SpecLike = Union[SsdpSpec, AugmentedSpec]


def _as_spec(spec: SpecLike) -> SsdpSpec:
    return spec.spec if isinstance(spec, AugmentedSpec) else spec


# ==================== Stepping and rollouts ====================


def step(spec: SpecLike, s: Any, a: Any, w: Any) -> Tuple[np.ndarray, float]:
    """Apply one transition.

    Args:
        spec: Process description
        s: State S_k
        a: Action a_k
        w: Exogenous sample W_k

    Returns:
        (S_{k+1}, r(S_k, a_k, W_k))

    Raises:
        ContractViolationError: On any dimension mismatch
    """
    spec = _as_spec(spec)
    s = as_vector(s, spec.state_dim, "state", MODULE)
    a = as_vector(a, spec.action_dim, "action", MODULE)
    w = as_vector(w, spec.exo_process.w_dim, "exogenous sample", MODULE)
    s_next = as_vector(spec.transition(s, a, w), spec.state_dim, "transition output", MODULE)
    r = float(spec.reward(s, a, w))
    return s_next, r


def rollout(
    spec: SpecLike,
    policy: Policy,
    exo_source: Optional[Any] = None,
    horizon: Optional[int] = None,
    seed: int = 0,
    s0: Optional[Any] = None,
) -> Trajectory:
    """Run one seeded episode.

    Args:
        spec: Process description
        policy: State to action map
        exo_source: Exogenous process (defaults to the process's own)
        horizon: Number of steps (defaults to spec.horizon)
        seed: Seed of the single generator used for S_0 and every exogenous draw
        s0: Fixed initial state (skips the initial draw)

    Returns:
        Trajectory of exactly horizon records

    Raises:
        ContractViolationError: If no horizon >= 1 is available
    """
    spec = _as_spec(spec)
    horizon = horizon if horizon is not None else spec.horizon
    if horizon is None or horizon < 1:
        raise ContractViolationError(f"horizon must be >= 1, got {horizon}", module=MODULE)
    rng = make_rng(seed)
    source = exo_source if exo_source is not None else spec.exo_process
    stream = source.stream(rng)
    s = (as_vector(s0, spec.state_dim, "s0", MODULE) if s0 is not None
         else spec.initial_state(rng, stream))

    records = []
    for _ in range(horizon):
        a = as_vector(policy(s), spec.action_dim, "policy output", MODULE)
        a, clamped = spec.clamp(a)
        w = stream.draw()
        s_next, r = step(spec, s, a, w)
        records.append(TransitionRecord(s=s, a=a, w=w, r=r, s_next=s_next, clamped=clamped))
        s = s_next

    traj = Trajectory(steps=records, seed=seed, gamma=spec.gamma)
    if traj.clamp_count:
        logger.warning("%s: %d of %d actions clamped to bounds", spec.name,
                       traj.clamp_count, horizon)
    logger.debug("%s: rollout seed=%d horizon=%d", spec.name, seed, horizon)
    return traj


def discounted_return(traj: Union[Trajectory, Sequence[float]], gamma: float) -> float:
    """Sum of gamma^l R_{l+1} over a trajectory or reward sequence.

    Raises:
        ContractViolationError: If gamma is outside [0, 1]
    """
    if not 0.0 <= gamma <= 1.0:
        raise ContractViolationError(f"gamma must be in [0, 1], got {gamma}", module=MODULE)
    rewards = traj.rewards if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    if rewards.size == 0:
        return 0.0
    return float(np.dot(discount_weights(gamma, rewards.size), rewards))


class SsdpEnv:
    """Step-wise environment over an SsdpSpec with optional observation map.

    Supports snapshot/restore so rollouts can restart from recorded states.

    Example:
        env = SsdpEnv(spec, horizon=100)
        obs = env.reset(seed=3)
        obs, r, done, info = env.step(np.array([0.0]))
    """

    def __init__(
        self,
        spec: SpecLike,
        exo_source: Optional[Any] = None,
        observe: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        horizon: Optional[int] = None,
    ):
        self.spec = _as_spec(spec)
        self.exo_source = exo_source if exo_source is not None else self.spec.exo_process
        self.observe = observe
        self.horizon = horizon if horizon is not None else self.spec.horizon
        if self.horizon is None:
            raise ContractViolationError("environment needs a finite horizon", module=MODULE)
        self._stream: Any = None
        self._state: Optional[np.ndarray] = None
        self.k = 0

    @property
    def gamma(self) -> float:
        return self.spec.gamma

    @property
    def action_dim(self) -> int:
        return self.spec.action_dim

    @property
    def action_low(self) -> np.ndarray:
        low = self.spec.action_low
        return np.full(self.action_dim, -1.0) if low is None else np.asarray(low, dtype=float)

    @property
    def action_high(self) -> np.ndarray:
        high = self.spec.action_high
        return np.full(self.action_dim, 1.0) if high is None else np.asarray(high, dtype=float)

    @property
    def state(self) -> np.ndarray:
        return self._state.copy()

    @property
    def observation_dim(self) -> int:
        if self.observe is None:
            return self.spec.state_dim
        return int(np.asarray(self.observe(np.zeros(self.spec.state_dim))).size)

    def _obs(self) -> np.ndarray:
        return self._state.copy() if self.observe is None else np.asarray(self.observe(self._state))

    def reset(self, seed: Optional[int] = None, state: Optional[np.ndarray] = None) -> np.ndarray:
        """Start an episode and return the first observation."""
        rng = make_rng(seed)
        self._stream = self.exo_source.stream(rng)
        self._state = (as_vector(state, self.spec.state_dim, "state", MODULE) if state is not None
                       else self.spec.initial_state(rng, self._stream))
        self.k = 0
        return self._obs()

    def step(self, action: Any) -> Tuple[np.ndarray, float, bool, Dict[str, Any]]:
        """Advance one step; returns (observation, reward, done, info)."""
        a = as_vector(action, self.spec.action_dim, "action", MODULE)
        a, clamped = self.spec.clamp(a)
        w = self._stream.draw()
        s_prev = self._state
        self._state, r = step(self.spec, s_prev, a, w)
        self.k += 1
        done = self.k >= self.horizon
        return self._obs(), r, done, {"w": w, "clamped": clamped, "state": s_prev}

    def snapshot(self) -> Dict[str, Any]:
        """Copy of the full simulator state."""
        return {"state": self._state.copy(), "k": self.k, "stream": copy.deepcopy(self._stream)}

    def restore(self, snap: Dict[str, Any], seed: Optional[int] = None) -> np.ndarray:
        """Return to a snapshot, optionally reseeding future exogenous draws."""
        self._state = snap["state"].copy()
        self.k = snap["k"]
        self._stream = copy.deepcopy(snap["stream"])
        if seed is not None:
            _reseed(self._stream, make_rng(seed))
        return self._obs()


def restart_return(
    env: Any,
    snap: Dict[str, Any],
    first_action: Any,
    policy: Policy,
    horizon: int,
    seed: int,
) -> float:
    """Discounted return of restarting env at a snapshot.

    The first step plays first_action; the remaining steps follow policy. Exogenous
    draws after the restart come from seed, so two calls with the same seed see the
    same randomness.

    Raises:
        UnsupportedError: If env has no snapshot/restore
    """
    if not (hasattr(env, "snapshot") and hasattr(env, "restore")):
        raise UnsupportedError(f"{type(env).__name__} cannot restore recorded states")
    env.restore(snap, seed=seed)
    obs, r, done, _ = env.step(first_action)
    total, discount = r, env.gamma
    for _ in range(horizon - 1):
        if done:
            break
        obs, r, done, _ = env.step(policy(obs))
        total += discount * r
        discount *= env.gamma
    return float(total)


def _reseed(stream: Any, rng: np.random.Generator) -> None:
    stream.rng = rng
    for attr in ("base_stream", "delay_stream"):
        inner = getattr(stream, attr, None)
        if inner is not None:
            _reseed(inner, rng)


# ==================== Augmentations ====================


def augment_with_exogenous(spec: SsdpSpec) -> AugmentedSpec:
    """Enlarge the state with the current exogenous sample: S~_k = (S_k, W_k).

    The augmented transition is S~_{k+1} = (f^S(S_k, a_k, W_k), W_{k+1}) and the reward
    r(S~_k, a_k) = r(S_k, a_k, W_k). The new exogenous sample is W_{k+1}.
    """
    base = spec
    d = base.state_dim
    exo = base.exo_process
    w_dim = exo.w_dim

    def transition(st: np.ndarray, a: np.ndarray, w_new: np.ndarray) -> np.ndarray:
        return np.concatenate([base.transition(st[:d], a, st[d:]), w_new])

    def reward(st: np.ndarray, a: np.ndarray, w_new: np.ndarray) -> float:
        return base.reward(st[:d], a, st[d:])

    def initializer(rng: np.random.Generator, stream: Any) -> np.ndarray:
        return np.concatenate([base.initial_state(rng, stream), stream.draw()])

    exo_given_state = None
    if exo.kind == ExoKind.DRIVEN and exo.next_w_given_w is not None:
        exo_given_state = lambda st: exo.next_w_given_w(st[d:])  # noqa: E731

    init_support, init_probs = _product_init(base, exo)
    aug = SsdpSpec(
        state_dim=d + w_dim,
        action_dim=base.action_dim,
        transition=transition,
        reward=reward,
        exo_process=exo,
        gamma=base.gamma,
        horizon=base.horizon,
        action_low=base.action_low,
        action_high=base.action_high,
        initializer=initializer,
        init_support=init_support,
        init_probs=init_probs,
        exo_given_state=exo_given_state,
        markov_declared=True if exo.kind == ExoKind.IID or exo_given_state is not None else None,
        name=f"{base.name}+W",
        state_names=tuple(base.state_names) + tuple(f"w[{i}]" for i in range(w_dim)),
    )
    return AugmentedSpec(base=base, kind=AugmentationKind.WITH_W, spec=aug,
                         augmented_state_dim=d + w_dim)


def _product_init(base: SsdpSpec, exo: Any) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
    """Enumerable (S_0, W_0) support when both factors are enumerable."""
    dist = base.initial_distribution()
    if dist is None or not getattr(exo, "is_enumerable", False):
        return None, None
    s_sup, s_p = dist
    rows, probs = [], []
    for i in range(s_sup.shape[0]):
        for j in range(exo.support.shape[0]):
            rows.append(np.concatenate([s_sup[i], exo.support[j]]))
            probs.append(s_p[i] * exo.probs[j])
    return np.vstack(rows), np.asarray(probs)


def augment_with_predictor(spec: SsdpSpec, predictor_dim: int) -> AugmentedSpec:
    """Enlarge the state with the predictor: S~'_k = (S_k, W~_k).

    The reward is r(S_k, a_k, f^W(W~_k)) and the new exogenous sample is W~_{k+1}.

    Args:
        spec: Process with a driven exogenous process
        predictor_dim: Dimension of W~_k; 0 returns the process unchanged

    Raises:
        UnsupportedError: If the exogenous process is not driven
        ContractViolationError: If predictor_dim does not match the process
    """
    if predictor_dim == 0:
        return AugmentedSpec(base=spec, kind=AugmentationKind.WITH_WTILDE, spec=spec,
                             augmented_state_dim=spec.state_dim)
    exo = spec.exo_process
    if getattr(exo, "kind", None) != ExoKind.DRIVEN or not isinstance(exo, ExoProcess):
        raise UnsupportedError(
            f"{spec.name}: predictor augmentation needs a driven exogenous process, "
            f"got {getattr(exo, 'kind', 'unknown')}"
        )
    if predictor_dim != exo.wtilde_dim:
        raise ContractViolationError(
            f"predictor_dim {predictor_dim} does not match W~ dimension {exo.wtilde_dim}",
            module=MODULE,
        )
    base = spec
    d = base.state_dim
    f_w = exo.f_w

    def transition(st: np.ndarray, a: np.ndarray, wt_new: np.ndarray) -> np.ndarray:
        w = np.atleast_1d(f_w(st[d:]))
        return np.concatenate([base.transition(st[:d], a, w), wt_new])

    def reward(st: np.ndarray, a: np.ndarray, wt_new: np.ndarray) -> float:
        return base.reward(st[:d], a, np.atleast_1d(f_w(st[d:])))

    def initializer(rng: np.random.Generator, stream: Any) -> np.ndarray:
        return np.concatenate([base.initial_state(rng, stream), stream.draw()])

    exo_given_state = None
    if exo.wtilde_transition is not None:
        exo_given_state = lambda st: exo.wtilde_transition(st[d:])  # noqa: E731

    aug = SsdpSpec(
        state_dim=d + predictor_dim,
        action_dim=base.action_dim,
        transition=transition,
        reward=reward,
        exo_process=exo.predictor_process(),
        gamma=base.gamma,
        horizon=base.horizon,
        action_low=base.action_low,
        action_high=base.action_high,
        initializer=initializer,
        exo_given_state=exo_given_state,
        markov_declared=True,
        name=f"{base.name}+Wtilde",
        state_names=tuple(base.state_names) + tuple(f"wt[{i}]" for i in range(predictor_dim)),
    )
    return AugmentedSpec(base=base, kind=AugmentationKind.WITH_WTILDE, spec=aug,
                         augmented_state_dim=d + predictor_dim)


def augment_random_delay(spec: SsdpSpec, tau_max: int, delay_process: ExoProcess) -> AugmentedSpec:
    """Random-delay state: (S_{k-tau_k}, W_{k-tau_k}, last tau_max actions, tau_k).

    Episodes start with tau_0 = 1, a zero action history and the true process one step
    ahead of the snapshot. On each step the snapshot advances tau_k - tau_{k+1} + 1
    steps through the recorded actions; the reward is evaluated at the true current
    state, rebuilt from the snapshot, the action history and the revealed exogenous
    block.

    Args:
        spec: Base process
        tau_max: Largest delay
        delay_process: Emits integer delays in [1, tau_max]

    Raises:
        ContractViolationError: If tau_max < 1; draws outside [1, tau_max] raise when drawn
    """
    if tau_max < 1:
        raise ContractViolationError(f"tau_max must be >= 1, got {tau_max}", module=MODULE)
    base = spec
    d, ad = base.state_dim, base.action_dim
    w_dim = base.exo_process.w_dim
    h_len = tau_max * ad
    dim = d + w_dim + h_len + 1
    exo = DelayedExoProcess(base.exo_process, delay_process, tau_max)

    def unpack(st: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
        hist = st[d + w_dim: d + w_dim + h_len].reshape(tau_max, ad)
        return st[:d], st[d: d + w_dim], hist, int(round(st[-1]))

    def delayed_actions(hist: np.ndarray, tau: int) -> np.ndarray:
        return hist[tau_max - tau:]

    def transition(st: np.ndarray, a: np.ndarray, wd: np.ndarray) -> np.ndarray:
        s, w, hist, tau = unpack(st)
        block = wd[:-1].reshape(tau_max, w_dim)
        tau_next = int(round(wd[-1]))
        n = tau - tau_next + 1
        if n < 0 or n > tau:
            raise ContractViolationError(
                f"delay moved from {tau} to {tau_next}; snapshot cannot move backwards",
                module=MODULE,
            )
        acts = delayed_actions(hist, tau)
        for i in range(n):
            s = np.asarray(base.transition(s, acts[i], w), dtype=float)
            w = block[i]
        hist_next = np.vstack([hist[1:], np.asarray(a, dtype=float).reshape(1, ad)])
        return np.concatenate([s, w, hist_next.ravel(), [float(tau_next)]])

    def reward(st: np.ndarray, a: np.ndarray, wd: np.ndarray) -> float:
        s, w, hist, tau = unpack(st)
        block = wd[:-1].reshape(tau_max, w_dim)
        acts = delayed_actions(hist, tau)
        for i in range(tau):
            s = np.asarray(base.transition(s, acts[i], w), dtype=float)
            w = block[i]
        return base.reward(s, a, w)

    def initializer(rng: np.random.Generator, stream: DelayedExoStream) -> np.ndarray:
        s0 = base.initial_state(rng, stream.base_stream)
        w0 = stream.first()
        return np.concatenate([s0, w0, np.zeros(h_len), [1.0]])

    aug = SsdpSpec(
        state_dim=dim,
        action_dim=ad,
        transition=transition,
        reward=reward,
        exo_process=exo,
        gamma=base.gamma,
        horizon=base.horizon,
        action_low=base.action_low,
        action_high=base.action_high,
        initializer=initializer,
        name=f"{base.name}+delay",
        state_names=(
            tuple(base.state_names)
            + tuple(f"w[{i}]" for i in range(w_dim))
            + tuple(f"a_hist[{i}]" for i in range(h_len))
            + ("tau",)
        ),
    )
    return AugmentedSpec(base=base, kind=AugmentationKind.RANDOM_DELAY, spec=aug,
                         augmented_state_dim=dim, tau_max=tau_max, delay_process=delay_process)


# ==================== Markov check ====================


def check_markov(
    spec: SpecLike,
    grid: Optional[StateGrid],
    n_samples: int = 10_000,
    seed: int = 0,
    alpha: float = 0.01,
    episode_len: int = 50,
) -> MarkovReport:
    """Test whether the next state depends on history beyond (S_k, a_k).

    Random grid actions drive episodes; states snap to grid cells. For every
    (cell, action) group, a previous-cell by next-cell contingency table with one
    Laplace pseudo-count per entry is tested with chi-square; statistics and degrees of
    freedom are pooled. The structural verdict from the exogenous process declaration
    decides when available.

    Args:
        spec: Process to test
        grid: Discretization of states and actions
        n_samples: Number of (previous, current, action, next) samples, at least 10^4
        seed: Seed of the sampling run
        alpha: Significance level
        episode_len: Steps per sampling episode

    Returns:
        MarkovReport

    Raises:
        UnsupportedError: If no grid is supplied
        ContractViolationError: If n_samples < 10^4
    """
    spec = _as_spec(spec)
    if grid is None:
        raise UnsupportedError(f"{spec.name}: check_markov needs a state/action grid")
    if n_samples < 10_000:
        raise ContractViolationError(f"n_samples must be >= 10^4, got {n_samples}",
                                     module=MODULE)
    structural = spec.markov_declared
    if structural is None:
        structural = getattr(spec.exo_process, "structurally_markov", None)
    rng = make_rng(seed)

    groups: Dict[Tuple[int, int], List[Tuple[int, int]]] = {}
    collected = 0
    episode_len = max(episode_len, 3)
    while collected < n_samples:
        stream = spec.exo_process.stream(rng)
        s = spec.initial_state(rng, stream)
        prev_cell: Optional[int] = None
        for _ in range(episode_len):
            cell, _ = grid.snap(s)
            a_idx = int(rng.integers(grid.n_actions))
            w = stream.draw()
            s_next, _ = step(spec, s, grid.actions[a_idx], w)
            if prev_cell is not None:
                next_cell, _ = grid.snap(s_next)
                groups.setdefault((cell, a_idx), []).append((prev_cell, next_cell))
                collected += 1
                if collected >= n_samples:
                    break
            prev_cell = cell
            s = s_next

    total_stat, total_dof, tested = 0.0, 0, 0
    for pairs in groups.values():
        arr = np.asarray(pairs)
        prev_vals, prev_idx = np.unique(arr[:, 0], return_inverse=True)
        next_vals, next_idx = np.unique(arr[:, 1], return_inverse=True)
        if prev_vals.size < 2 or next_vals.size < 2:
            continue
        table = np.ones((prev_vals.size, next_vals.size))
        np.add.at(table, (prev_idx, next_idx), 1.0)
        stat, _, dof, _ = stats.chi2_contingency(table, correction=False)
        total_stat += float(stat)
        total_dof += int(dof)
        tested += 1

    p_value = float(stats.chi2.sf(total_stat, total_dof)) if total_dof > 0 else 1.0
    empirical = p_value >= alpha
    verdict = structural if structural is not None else empirical
    if structural is not None and structural != empirical:
        logger.info("%s: structural verdict %s overrides empirical p=%.3g", spec.name,
                    structural, p_value)
    return MarkovReport(
        is_markov=bool(verdict),
        structural=structural,
        chi2=total_stat,
        dof=total_dof,
        p_value=p_value,
        n_samples=collected,
        groups_tested=tested,
        alpha=alpha,
    )
