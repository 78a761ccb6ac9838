"""Value-of-information metrics and their estimators.

Utility-based VoI compares a policy acting on inferior (missing or imperfect)
information with the reference policy acting on full information:

- EVoI: J_inf - J_sup
- IVoI: A_sup(s_sup, a_inf), the reference advantage of the inferior action

Both are non-positive when the reference policy is optimal. ITVoI is a KL divergence
between the augmented-state model and the product of the models without the
information.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special, stats

from cav.voi import dp
from cav.voi.data.enums import VoiKind, VoiMethod
from cav.voi.data.params import MethodAConfig, TrainConfig
from cav.voi.data.records import ItvoiResult, MethodAResult, OccupancyIdentityReport, VoiRecord
from cav.voi.data.tables import PolicyTable, StateGrid, TabularMdp
from cav.voi.exceptions import (
    ContractViolationError,
    EstimatorUnavailableError,
    UnsupportedError,
    ValidationError,
)
from cav.voi.nn import Mlp
from cav.voi.ssdp import Policy, SpecLike, _as_spec, restart_return
from cav.voi.td3 import ActorCritic, fit_advantage_estimator, td_error
from cav.voi.utils import derive_seeds, make_rng, mean_ci

logger = logging.getLogger(__name__)

MODULE = "voi"

LAPLACE_EPS = 1e-9


# ==================== Critics ====================


class TabularCritic:
    """Exact V/Q/A of a tabular policy, addressed by continuous states through a grid.

    Without a grid, states and actions are indices (as produced by TabularEnv).
    """

    method = VoiMethod.EXACT_DP

    def __init__(self, mdp: TabularMdp, policy: PolicyTable, grid: Optional[StateGrid] = None):
        self.mdp = mdp
        self.policy = policy
        self.grid = grid
        self.V = dp.policy_evaluation(mdp, policy, exact=True)
        self.Q = dp.q_from_v(mdp, self.V)
        self.A = dp.advantage_table(self.Q, self.V)

    def state_index(self, s: Any) -> int:
        s = np.asarray(s, dtype=float).ravel()
        if self.grid is not None:
            return self.grid.snap(s[: self.grid.state_dim])[0]
        return int(round(float(s[0])))

    def action_index(self, a: Any) -> int:
        if self.grid is not None:
            return self.grid.snap_action(a)
        return int(round(float(np.asarray(a, dtype=float).ravel()[0])))

    def value(self, s: Any) -> float:
        return self.V[self.state_index(s)]

    def q(self, s: Any, a: Any) -> float:
        return self.Q[self.state_index(s), self.action_index(a)]

    def advantage(self, s: Any, a: Any) -> float:
        return self.A[self.state_index(s), self.action_index(a)]


class QAdvantageCritic:
    """Advantage from a Q function: Q(s, a) - Q(s, pi_sup(s)), or Q(s, a) - V(s)."""

    method = VoiMethod.B

    def __init__(
        self,
        q: Callable[[Any, Any], float],
        pi_sup: Optional[Policy] = None,
        value: Optional[Callable[[Any], float]] = None,
    ):
        self._q = q
        self._pi_sup = pi_sup
        self._value = value

    def q(self, s: Any, a: Any) -> float:
        return float(self._q(s, a))

    def value(self, s: Any) -> float:
        if self._value is not None:
            return float(self._value(s))
        return self.q(s, self._pi_sup(s))

    def advantage(self, s: Any, a: Any) -> float:
        return self.q(s, a) - self.value(s)


@dataclass
class PolicyPair:
    """Reference policy on full information and a policy on inferior information.

    Attributes:
        pi_sup: Reference policy over full observations
        pi_inf: Policy over inferior observations
        critic_sup: Advantage/Q/value access for pi_sup
        observe_inf: Builds the inferior observation from (env, full observation);
            identity when None
        fallback_mode: pi_inf also plays the reference role because no reference
            policy is available
    """

    pi_sup: Policy
    pi_inf: Policy
    critic_sup: Any = None
    observe_inf: Optional[Callable[[Any, np.ndarray], np.ndarray]] = None
    fallback_mode: bool = False

    @classmethod
    def fallback(
        cls,
        pi_inf: Policy,
        critic_inf: Any = None,
        observe_inf: Optional[Callable[[Any, np.ndarray], np.ndarray]] = None,
    ) -> "PolicyPair":
        """Pair with pi_inf in both roles."""
        logger.warning("no reference policy available, using the inferior policy in its place")
        return cls(pi_sup=pi_inf, pi_inf=pi_inf, critic_sup=critic_inf, observe_inf=observe_inf,
                   fallback_mode=True)

    def inferior_observation(self, env: Any, obs: np.ndarray) -> np.ndarray:
        return obs if self.observe_inf is None else self.observe_inf(env, obs)

    def inferior_action(self, env: Any, obs: np.ndarray) -> np.ndarray:
        return np.asarray(self.pi_inf(self.inferior_observation(env, obs)), dtype=float)

    def require_critic(self) -> Any:
        if self.critic_sup is None:
            raise EstimatorUnavailableError(
                "IVoI needs an advantage estimator for pi_sup (tabular critic, "
                "ivoi_method_b evaluator or a Method A estimator)",
                estimator="critic_sup",
            )
        return self.critic_sup

    @property
    def context(self) -> Dict[str, Any]:
        return {"fallback_mode": self.fallback_mode}


# ==================== EVoI ====================


def evoi(J_inf: float, J_sup: float) -> float:
    """Expected cumulative VoI J_inf - J_sup."""
    return float(J_inf) - float(J_sup)


def evoi_exact(
    mdp: TabularMdp,
    pi_inf: PolicyTable,
    pi_sup: PolicyTable,
    kind: VoiKind = VoiKind.EVOMI,
) -> VoiRecord:
    """EVoI from exact policy evaluation of both tables."""
    J_inf = dp.exact_performance(mdp, pi_inf)
    J_sup = dp.exact_performance(mdp, pi_sup)
    return VoiRecord(kind=kind, value=evoi(J_inf, J_sup), method=VoiMethod.EXACT_DP,
                     context={"J_inf": J_inf, "J_sup": J_sup})


def _episode_return(env: Any, act: Callable[[Any, np.ndarray], np.ndarray], seed: int,
                    horizon: Optional[int]) -> Tuple[float, List[Tuple[np.ndarray, np.ndarray]]]:
    obs = env.reset(seed=seed)
    total, discount, k = 0.0, 1.0, 0
    visited = []
    done = False
    while not done and (horizon is None or k < horizon):
        a = act(env, obs)
        visited.append((np.asarray(obs, dtype=float).copy(), a))
        obs, r, done, _ = env.step(a)
        total += discount * r
        discount *= env.gamma
        k += 1
    return total, visited


def evoi_montecarlo(
    env: Any,
    pair: PolicyPair,
    n_episodes: int,
    seed: int = 0,
    horizon: Optional[int] = None,
    kind: VoiKind = VoiKind.EVOMI,
) -> VoiRecord:
    """EVoI from paired episodes with a 95% t confidence interval.

    Episode e runs both policies from the same seed, so they share the initial state
    and the exogenous randomness.

    Raises:
        ValidationError: If n_episodes < 2
    """
    if n_episodes < 2:
        raise ValidationError(f"n_episodes must be >= 2, got {n_episodes}")
    diffs = np.empty(n_episodes)
    for e, ep_seed in enumerate(derive_seeds(seed, n_episodes)):
        G_sup, _ = _episode_return(env, lambda _env, obs: pair.pi_sup(obs), ep_seed, horizon)
        G_inf, _ = _episode_return(env, pair.inferior_action, ep_seed, horizon)
        diffs[e] = G_inf - G_sup
    mean, se, ci = mean_ci(diffs)
    logger.info("%s monte carlo: %.4f (95%% CI %.4f .. %.4f) over %d episodes",
                kind.value, mean, ci[0], ci[1], n_episodes)
    return VoiRecord(kind=kind, value=mean, method=VoiMethod.MONTE_CARLO, ci=ci,
                     context={"standard_error": se, "n_episodes": n_episodes, **pair.context})


# ==================== IVoI ====================


def ivoi(pair: PolicyPair, s_sup: Any, s_inf: Any) -> float:
    """Immediate VoI A_sup(s_sup, a_inf) with a_inf = pi_inf(s_inf).

    Raises:
        EstimatorUnavailableError: If the pair has no critic for pi_sup
    """
    critic = pair.require_critic()
    a_inf = pair.pi_inf(np.asarray(s_inf, dtype=float))
    return float(critic.advantage(np.asarray(s_sup, dtype=float), a_inf))


def ivoi_along(
    env: Any,
    pair: PolicyPair,
    seed: int = 0,
    kind: VoiKind = VoiKind.IVOMI,
    act_with: str = "sup",
    horizon: Optional[int] = None,
) -> List[VoiRecord]:
    """Per-step IVoI records along one episode.

    The episode is driven by pi_sup (act_with="sup") or by pi_inf ("inf").
    """
    critic = pair.require_critic()
    method = getattr(critic, "method", VoiMethod.B)
    records = []
    obs = env.reset(seed=seed)
    done, k = False, 0
    while not done and (horizon is None or k < horizon):
        a_inf = pair.inferior_action(env, obs)
        xi = float(critic.advantage(obs, a_inf))
        records.append(VoiRecord(kind=kind, value=xi, method=method, k=k,
                                 state=obs.copy(), action=a_inf, context=pair.context))
        a = np.asarray(pair.pi_sup(obs), dtype=float) if act_with == "sup" else a_inf
        obs, _, done, _ = env.step(a)
        k += 1
    return records


def _collect_rollout_set(
    env: Any, pair: PolicyPair, config: MethodAConfig, seed: int
) -> List[Tuple[np.ndarray, np.ndarray, Any]]:
    """(observation, a_inf, snapshot) from episodes of pi_inf, pi_sup and their mix."""
    rng = make_rng(seed)
    visited = []
    for mode in ("inf", "sup", "mix"):
        for ep_seed in derive_seeds(int(rng.integers(2 ** 31)), config.collection_episodes):
            obs = env.reset(seed=ep_seed)
            done = False
            while not done:
                a_inf = pair.inferior_action(env, obs)
                visited.append((np.asarray(obs, dtype=float).copy(), a_inf, env.snapshot()))
                use_inf = mode == "inf" or (mode == "mix" and rng.random() < config.mix_prob)
                obs, _, done, _ = env.step(a_inf if use_inf else pair.pi_sup(obs))
    return visited


def ivoi_method_a(
    env: Any,
    pair: PolicyPair,
    config: Optional[MethodAConfig] = None,
    seed: int = 0,
    train_config: Optional[TrainConfig] = None,
) -> MethodAResult:
    """Monte-Carlo IVoI labels and an optional fitted estimator.

    Rollout-set states are drawn uniformly from episodes of pi_inf, pi_sup and a
    mixed policy that picks the inferior action with probability mix_prob. For each
    state, paired rollouts start with a_inf and with pi_sup's action and then follow
    pi_sup; the mean return difference is the label.

    Raises:
        ConfigError: If rollout_set_size or rollouts_per_state < 1
        UnsupportedError: If env cannot restore recorded states
    """
    config = config or MethodAConfig()
    config.validate()
    if not (hasattr(env, "snapshot") and hasattr(env, "restore")):
        raise UnsupportedError(f"{type(env).__name__} cannot restore recorded states")
    rng = make_rng(seed)
    visited = _collect_rollout_set(env, pair, config, seed)
    n = min(config.rollout_set_size, len(visited))
    picks = np.sort(rng.choice(len(visited), size=n, replace=False))

    states, actions = [], []
    samples = np.empty((n, config.rollouts_per_state))
    for row, i in enumerate(picks):
        obs, a_inf, snap = visited[int(i)]
        a_sup = np.asarray(pair.pi_sup(obs), dtype=float)
        for j, r_seed in enumerate(derive_seeds(int(rng.integers(2 ** 31)),
                                                config.rollouts_per_state)):
            G_inf = restart_return(env, snap, a_inf, pair.pi_sup, config.horizon, r_seed)
            G_sup = restart_return(env, snap, a_sup, pair.pi_sup, config.horizon, r_seed)
            samples[row, j] = G_inf - G_sup
        states.append(obs)
        actions.append(np.ravel(a_inf))

    labels = samples.mean(axis=1)
    m = config.rollouts_per_state
    se = samples.std(axis=1, ddof=1) / np.sqrt(m) if m > 1 else np.zeros(n)
    result = MethodAResult(states=np.vstack(states), inferior_actions=np.vstack(actions),
                           labels=labels, standard_errors=se, samples=samples)
    if config.fit:
        net = fit_advantage_estimator(result.dataset(), train_config, seed)
        result.estimator = net
        result.train_mse = net.metadata.get("train_mse")
    return result


def ivoi_method_b(
    q: Union[ActorCritic, Callable[[Any, Any], float]],
    pi_sup: Optional[Policy] = None,
    stochastic: bool = False,
    value_head: Optional[Callable[[Any], float]] = None,
) -> QAdvantageCritic:
    """IVoI evaluator from Q critics.

    With an ActorCritic the twin minimum is used and pi_sup defaults to the actor.
    Deterministic pi_sup: xi = Q(s, a_inf) - Q(s, pi_sup(s)).

    Raises:
        EstimatorUnavailableError: For a stochastic pi_sup without a value head
    """
    if isinstance(q, ActorCritic):
        ac = q
        q_fn: Callable[[Any, Any], float] = ac.q
        pi_sup = pi_sup or ac.as_policy()
        if value_head is None and stochastic and ac.value_head is not None:
            value_head = ac.value
    else:
        q_fn = q
    if stochastic:
        if value_head is None:
            raise EstimatorUnavailableError(
                "stochastic pi_sup needs a value head; use ivoi_method_c with V",
                estimator="value_head",
            )
        return QAdvantageCritic(q_fn, value=value_head)
    if pi_sup is None:
        raise ContractViolationError("ivoi_method_b needs pi_sup for a plain Q function",
                                     module=MODULE)
    return QAdvantageCritic(q_fn, pi_sup=pi_sup)


def ivoi_method_c(
    value_head: Union[Mlp, Callable[[np.ndarray], float]],
    transitions: Iterable[Sequence[Any]],
    gamma: float,
) -> np.ndarray:
    """TD errors delta_k = r + gamma V(s_next) - V(s) along a transition stream.

    Transitions are (s, r, s_next) or (s, r, s_next, done).
    """
    deltas = []
    for tr in transitions:
        done = bool(tr[3]) if len(tr) > 3 else False
        deltas.append(td_error(value_head, (tr[0], tr[1], tr[2]), gamma, done=done))
    return np.asarray(deltas, dtype=float)


def bucket_means(deltas: Sequence[float], keys: Sequence[Any]) -> Dict[Any, float]:
    """Running means of per-step estimates grouped by a hashable (state, action) key."""
    sums: Dict[Any, List[float]] = {}
    for d, key in zip(deltas, keys):
        sums.setdefault(key, []).append(float(d))
    return {key: float(np.mean(vals)) for key, vals in sums.items()}


def exo_averaged_td_error(
    spec: SpecLike,
    value: Callable[[np.ndarray], float],
    s: Any,
    a: Any,
) -> float:
    """TD error averaged over an enumerable exogenous law at (s, a).

    Raises:
        UnsupportedError: If the exogenous process is not enumerable
    """
    spec = _as_spec(spec)
    exo = spec.exo_process
    if spec.exo_given_state is not None:
        support, probs = spec.exo_given_state(np.asarray(s, dtype=float))
    elif getattr(exo, "is_enumerable", False):
        support, probs = exo.support, exo.probs
    else:
        raise UnsupportedError("exo averaging needs an enumerable exogenous law")
    s = np.asarray(s, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    total = 0.0
    for w, p in zip(np.atleast_2d(support), probs):
        s_next = spec.transition(s, a, w)
        total += p * td_error(value, (s, spec.reward(s, a, w), s_next), spec.gamma)
    return float(total)


# ==================== ITVoI ====================


@dataclass
class JointModel:
    """Enumerated model over the augmented state (S, I).

    Attributes:
        P: p(S', I' | S, I, a) with shape [S, I, A, S, I]
        reward_probs: p(R | S, I, a) over reward_values, shape [S, I, A, n_r]
        reward_values: Reward outcomes
        weighting: p(S, I, a), shape [S, I, A]; uniform when omitted
        weighting_name: Description of the weighting recorded with the result
    """

    P: np.ndarray
    reward_probs: np.ndarray
    reward_values: np.ndarray = field(default_factory=lambda: np.zeros(1))
    weighting: Optional[np.ndarray] = None
    weighting_name: str = "uniform"

    def __post_init__(self) -> None:
        self.P = np.asarray(self.P, dtype=float)
        self.reward_probs = np.asarray(self.reward_probs, dtype=float)
        if self.P.ndim != 5 or self.P.shape[3:] != self.P.shape[:2]:
            raise ContractViolationError(f"P must be [S, I, A, S, I], got {self.P.shape}",
                                         module=MODULE)
        if self.reward_probs.shape[:3] != self.P.shape[:3]:
            raise ContractViolationError("reward_probs must be [S, I, A, n_r]", module=MODULE)
        if self.weighting is None:
            self.weighting = np.full(self.P.shape[:3], 1.0 / np.prod(self.P.shape[:3]))
        self.weighting = np.asarray(self.weighting, dtype=float)

    @classmethod
    def from_rewards(cls, P: np.ndarray, rewards: np.ndarray, **kwargs: Any) -> "JointModel":
        """Build with deterministic rewards R[s, i, a]."""
        rewards = np.asarray(rewards, dtype=float)
        values, inverse = np.unique(rewards, return_inverse=True)
        probs = np.zeros(rewards.shape + (values.size,))
        flat = probs.reshape(-1, values.size)
        flat[np.arange(flat.shape[0]), inverse.ravel()] = 1.0
        return cls(P=P, reward_probs=probs, reward_values=values, **kwargs)


def stationary_weighting(
    model: JointModel, policy: np.ndarray, iterations: int = 2000
) -> np.ndarray:
    """p(S, I, a) under the long-run state distribution of policy.

    The state distribution is the Cesaro average of the chain started uniform, which
    exists even for periodic chains.

    Args:
        model: Joint model
        policy: pi(a | s, i), shape [S, I, A]
        iterations: Averaging steps

    Returns:
        Weighting of shape [S, I, A]
    """
    n_s, n_i, n_a = model.P.shape[:3]
    policy = np.asarray(policy, dtype=float).reshape(n_s, n_i, n_a)
    M = np.einsum("sia,siatj->sitj", policy, model.P).reshape(n_s * n_i, n_s * n_i)
    mu = np.full(n_s * n_i, 1.0 / (n_s * n_i))
    avg = np.zeros_like(mu)
    for _ in range(iterations):
        avg += mu
        mu = mu @ M
    avg /= iterations
    return avg.reshape(n_s, n_i)[:, :, None] * policy


def _smooth(p: np.ndarray, axes: Tuple[int, ...], eps: float) -> np.ndarray:
    q = p + eps
    return q / q.sum(axis=axes, keepdims=True)


def itvoi(model: JointModel, laplace: bool = False, eps: float = LAPLACE_EPS) -> ItvoiResult:
    """Transition KL plus reward KL of the model without I against the joint model.

    The model without I pairs p(S' | S, a) with p(I' | S, I, a) as if they were
    independent. I that duplicates S is therefore worth 0 only under deterministic
    transitions; with stochastic ones the value is H(S' | S, a) under the weighting.

    Infinite divergences are returned as inf with a diagnostic naming the first
    (s, i, a) where the product model assigns zero probability to a possible outcome.
    """
    P, Rp, w = model.P, model.reward_probs, model.weighting
    if laplace:
        P = _smooth(P, (3, 4), eps)
        Rp = _smooth(Rp, (3,), eps)
    w_sa = w.sum(axis=1)
    safe = np.where(w_sa > 0, w_sa, 1.0)

    # p(S' | S, a) marginalized over I with the weighting; p(I' | S, I, a)
    T_S = np.einsum("sia,siatj->sat", w, P) / safe[:, :, None]
    T_I = P.sum(axis=3)
    product = T_S[:, None, :, :, None] * T_I[:, :, :, None, :]
    trans_terms = special.rel_entr(P, product).sum(axis=(3, 4))
    transition_kl = float(np.sum(np.where(w > 0, w * trans_terms, 0.0)))

    T_rS = np.einsum("sia,siar->sar", w, Rp) / safe[:, :, None]
    reward_terms = special.rel_entr(Rp, T_rS[:, None, :, :]).sum(axis=3)
    reward_kl = float(np.sum(np.where(w > 0, w * reward_terms, 0.0)))

    diagnostic = None
    if not np.isfinite(transition_kl) or not np.isfinite(reward_kl):
        bad = np.argwhere((w > 0) & ~np.isfinite(trans_terms + reward_terms))
        where = tuple(int(x) for x in bad[0]) if bad.size else None
        diagnostic = (f"support mismatch at (s, i, a) = {where}: "
                      "model without I assigns zero probability")
        logger.warning("ITVoI is infinite: %s", diagnostic)
    return ItvoiResult(value=transition_kl + reward_kl, transition_kl=transition_kl,
                       reward_kl=reward_kl, diagnostic=diagnostic,
                       weighting=model.weighting_name)


def estimate_acc_pred_conditional(
    state_action_index: Sequence[int],
    acc_pred_index: Sequence[int],
    n_state_action: int,
    n_acc: int,
    laplace: bool = False,
    eps: float = LAPLACE_EPS,
) -> Tuple[np.ndarray, np.ndarray]:
    """Count-based p(acc_pred | S, u) and the empirical weighting p(S, u).

    Rows never visited get a uniform conditional and zero weight.

    Returns:
        (conditional [n_state_action, n_acc], weighting [n_state_action])
    """
    counts = np.zeros((n_state_action, n_acc))
    np.add.at(counts, (np.asarray(state_action_index, dtype=int),
                       np.asarray(acc_pred_index, dtype=int)), 1.0)
    totals = counts.sum(axis=1)
    if laplace:
        counts = counts + eps
    row = counts.sum(axis=1, keepdims=True)
    cond = np.where(row > 0, counts / np.where(row > 0, row, 1.0), 1.0 / n_acc)
    weighting = totals / totals.sum() if totals.sum() > 0 else totals
    return cond, weighting


def itvoi_vehicle(conditional: np.ndarray, weighting: np.ndarray,
                  weighting_name: str = "supplied") -> ItvoiResult:
    """Expected -log p(acc_pred | S, u) under the weighting over (S, u).

    Args:
        conditional: p(acc_pred | S, u), rows over (S, u) cells
        weighting: p(S, u) per row
    """
    cond = np.asarray(conditional, dtype=float)
    w = np.asarray(weighting, dtype=float).ravel()
    if cond.shape[0] != w.size:
        raise ContractViolationError("weighting length must equal the number of (S, u) rows",
                                     module=MODULE)
    value = float(np.dot(w, stats.entropy(cond, axis=1)))
    return ItvoiResult(value=value, transition_kl=value, reward_kl=0.0, weighting=weighting_name)


# ==================== Occupancy identity ====================


def lemma2_check(
    mdp: TabularMdp, pi_inf: PolicyTable, pi_sup: PolicyTable, tolerance: float = 1e-8
) -> OccupancyIdentityReport:
    """Exact comparison of EVoI with the occupancy-weighted discounted IVoI sum."""
    lhs, rhs = dp.performance_difference(mdp, pi_inf, pi_sup)
    gap = abs(lhs - rhs)
    return OccupancyIdentityReport(evoi=lhs, cumulative_ivoi=rhs, gap=gap,
                                   passed=gap <= tolerance, method=VoiMethod.EXACT_DP,
                                   tolerance=tolerance)


def lemma2_check_montecarlo(
    env: Any,
    pair: PolicyPair,
    n_episodes: int,
    seed: int = 0,
    horizon: Optional[int] = None,
) -> OccupancyIdentityReport:
    """Monte-Carlo comparison of paired return differences with sum_k gamma^k xi_k.

    The IVoI sum is taken along episodes of pi_inf; passes when the mean gap is within
    two standard errors.
    """
    if n_episodes < 2:
        raise ValidationError(f"n_episodes must be >= 2, got {n_episodes}")
    critic = pair.require_critic()
    diffs, cums = np.empty(n_episodes), np.empty(n_episodes)
    for e, ep_seed in enumerate(derive_seeds(seed, n_episodes)):
        G_sup, _ = _episode_return(env, lambda _env, obs: pair.pi_sup(obs), ep_seed, horizon)
        G_inf, visited = _episode_return(env, pair.inferior_action, ep_seed, horizon)
        weights = env.gamma ** np.arange(len(visited))
        xi = np.array([critic.advantage(s, a) for s, a in visited])
        diffs[e] = G_inf - G_sup
        cums[e] = float(np.dot(weights, xi))
    evoi_mean, _, _ = mean_ci(diffs)
    cum_mean, _, _ = mean_ci(cums)
    _, se, _ = mean_ci(diffs - cums)
    gap = abs(evoi_mean - cum_mean)
    return OccupancyIdentityReport(evoi=evoi_mean, cumulative_ivoi=cum_mean, gap=gap,
                                   passed=gap <= 2.0 * se + 1e-12, method=VoiMethod.MONTE_CARLO,
                                   tolerance=2.0 * se, standard_error=se)
