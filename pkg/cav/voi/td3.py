"""Twin-critic deterministic actor-critic training and critic refitting."""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from cav.voi.data.params import TrainConfig
from cav.voi.exceptions import DivergenceError, ValidationError
from cav.voi.nn import Adam, Mlp, ReplayBuffer, mlp_backward, soft_update
from cav.voi.ssdp import Policy, restart_return
from cav.voi.utils import derive_seeds, make_rng, write_frame

logger = logging.getLogger(__name__)

MODULE = "neural-rl"

ProgressFn = Callable[[int, float], None]


@dataclass
class ActorCritic:
    """Actor, twin critics, optional value head and their target copies.

    The actor ends in tanh and is rescaled to [action_low, action_high]. Critics take
    the concatenation [observation, action].
    """

    actor: Mlp
    critic_q1: Mlp
    critic_q2: Mlp
    actor_target: Mlp
    q1_target: Mlp
    q2_target: Mlp
    action_low: np.ndarray
    action_high: np.ndarray
    config: TrainConfig = field(default_factory=TrainConfig)
    value_head: Optional[Mlp] = None

    @classmethod
    def create(
        cls,
        obs_dim: int,
        action_dim: int,
        action_low: Sequence[float],
        action_high: Sequence[float],
        config: Optional[TrainConfig] = None,
        seed: int = 0,
    ) -> "ActorCritic":
        """Fresh networks with targets equal to their main networks."""
        config = config or TrainConfig()
        hidden = list(config.hidden_sizes)
        s_actor, s_q1, s_q2, s_v = derive_seeds(seed, 4)
        actor = Mlp([obs_dim, *hidden, action_dim], config.activation, "tanh", seed=s_actor)
        q1 = Mlp([obs_dim + action_dim, *hidden, 1], config.activation, seed=s_q1)
        q2 = Mlp([obs_dim + action_dim, *hidden, 1], config.activation, seed=s_q2)
        value = (Mlp([obs_dim, *hidden, 1], config.activation, seed=s_v)
                 if config.train_value_head else None)
        return cls(
            actor=actor,
            critic_q1=q1,
            critic_q2=q2,
            actor_target=actor.copy(),
            q1_target=q1.copy(),
            q2_target=q2.copy(),
            action_low=np.asarray(action_low, dtype=float),
            action_high=np.asarray(action_high, dtype=float),
            config=config,
            value_head=value,
        )

    @property
    def action_scale(self) -> np.ndarray:
        return (self.action_high - self.action_low) / 2.0

    def _scale(self, raw: np.ndarray) -> np.ndarray:
        return self.action_low + (raw + 1.0) * self.action_scale

    def act(self, obs: Any) -> np.ndarray:
        """Deterministic action for one observation or a batch."""
        return self._scale(self.actor.forward(obs))

    def act_target(self, obs: Any) -> np.ndarray:
        return self._scale(self.actor_target.forward(obs))

    def q_values(self, obs: Any, action: Any) -> Tuple[np.ndarray, np.ndarray]:
        x = np.concatenate([np.atleast_2d(obs), np.atleast_2d(action)], axis=1)
        return self.critic_q1.forward(x)[:, 0], self.critic_q2.forward(x)[:, 0]

    def q(self, obs: Any, action: Any) -> float:
        """Minimum of the twin critics at one (observation, action)."""
        q1, q2 = self.q_values(obs, action)
        return float(min(q1[0], q2[0]))

    def value(self, obs: Any) -> float:
        """Value head output; falls back to Q(obs, actor(obs))."""
        if self.value_head is not None:
            return float(self.value_head.forward(np.asarray(obs, dtype=float))[0])
        return self.q(obs, self.act(obs))

    def as_policy(self) -> Policy:
        def policy(obs: np.ndarray) -> np.ndarray:
            return self.act(np.asarray(obs, dtype=float))

        return policy

    def copy(self) -> "ActorCritic":
        return ActorCritic(
            actor=self.actor.copy(),
            critic_q1=self.critic_q1.copy(),
            critic_q2=self.critic_q2.copy(),
            actor_target=self.actor_target.copy(),
            q1_target=self.q1_target.copy(),
            q2_target=self.q2_target.copy(),
            action_low=self.action_low.copy(),
            action_high=self.action_high.copy(),
            config=self.config,
            value_head=None if self.value_head is None else self.value_head.copy(),
        )


@dataclass
class TrainingLog:
    """Per-episode training record."""

    episodes: List[int] = field(default_factory=list)
    returns: List[float] = field(default_factory=list)
    critic_losses: List[float] = field(default_factory=list)

    def append(self, episode: int, ret: float, loss: float) -> None:
        self.episodes.append(episode)
        self.returns.append(ret)
        self.critic_losses.append(loss)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"episode": self.episodes, "return": self.returns, "critic_loss": self.critic_losses}
        )

    def to_csv(self, path: str) -> str:
        return write_frame(self.to_frame(), path)


# ==================== TD3 ====================


def _critic_step(net: Mlp, opt: Adam, x: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray]:
    q = net.forward(x)[:, 0]
    err = q - y
    grads = mlp_backward(net, x, (2.0 * err / err.size)[:, None])
    opt.step(grads)
    return float(np.mean(err ** 2)), q


def train_td3(
    env: Any,
    config: Optional[TrainConfig] = None,
    seed: int = 0,
    progress_callback: Optional[ProgressFn] = None,
) -> Tuple[ActorCritic, TrainingLog]:
    """Train a deterministic policy with twin critics and delayed actor updates.

    Args:
        env: Environment with reset(seed)/step(action), gamma, observation_dim,
            action_dim, action_low and action_high
        config: Training constants
        seed: Seed of every random choice in training
        progress_callback: Called with (episode, return) at the end of each episode

    Returns:
        (ActorCritic, TrainingLog)

    Raises:
        DivergenceError: If a return is NaN or a critic output exceeds q_limit
    """
    config = config or TrainConfig()
    config.validate()
    rng = make_rng(seed)
    net_seed, buffer_seed = derive_seeds(seed, 2)
    low, high = np.asarray(env.action_low, dtype=float), np.asarray(env.action_high, dtype=float)
    obs_dim, act_dim = int(env.observation_dim), int(env.action_dim)
    ac = ActorCritic.create(obs_dim, act_dim, low, high, config, seed=net_seed)
    buffer = ReplayBuffer(config.buffer_size, obs_dim, act_dim, seed=buffer_seed)
    actor_opt = Adam(ac.actor, config.actor_lr)
    q1_opt = Adam(ac.critic_q1, config.critic_lr)
    q2_opt = Adam(ac.critic_q2, config.critic_lr)
    v_opt = Adam(ac.value_head, config.value_lr) if ac.value_head is not None else None
    scale = ac.action_scale
    gamma = float(env.gamma)

    log = TrainingLog()
    obs = env.reset(seed=int(rng.integers(2 ** 31)))
    ep_return, ep_losses, episode, updates = 0.0, [], 0, 0
    for t in range(config.total_steps):
        if t < config.start_steps:
            action = rng.uniform(low, high)
        else:
            noise = rng.normal(0.0, config.expl_noise, size=act_dim) * scale
            action = np.clip(ac.act(obs) + noise, low, high)
        obs_next, r, done, _ = env.step(action)
        if not np.isfinite(r):
            raise DivergenceError(f"non-finite reward at step {t}",
                                  diagnostic={"step": t, "reward": r, "episode": episode})
        buffer.add(obs, action, r, obs_next, done)
        ep_return += r
        obs = obs_next

        if len(buffer) >= config.batch_size and t >= config.start_steps:
            updates += 1
            s, a, rew, s2, d = buffer.sample(config.batch_size)
            noise = np.clip(rng.normal(0.0, config.policy_noise, size=a.shape),
                            -config.noise_clip, config.noise_clip) * scale
            a2 = np.clip(ac.act_target(s2) + noise, low, high)
            x2 = np.concatenate([s2, a2], axis=1)
            q_next = np.minimum(ac.q1_target.forward(x2)[:, 0], ac.q2_target.forward(x2)[:, 0])
            y = rew + gamma * (1.0 - d) * q_next
            x = np.concatenate([s, a], axis=1)
            loss1, q1 = _critic_step(ac.critic_q1, q1_opt, x, y)
            loss2, _ = _critic_step(ac.critic_q2, q2_opt, x, y)
            ep_losses.append(0.5 * (loss1 + loss2))
            q_max = float(np.max(np.abs(q1)))
            if not np.isfinite(q_max) or q_max > config.q_limit:
                raise DivergenceError(
                    f"critic output {q_max:g} exceeds {config.q_limit:g} at step {t}",
                    diagnostic={"step": t, "q_max": q_max, "episode": episode},
                )

            if updates % config.policy_delay == 0:
                raw, cache = ac.actor.forward_cache(s)
                a_pi = ac._scale(raw)
                x_pi = np.concatenate([s, a_pi], axis=1)
                dq = mlp_backward(ac.critic_q1, x_pi, np.ones((s.shape[0], 1))).inputs
                upstream = -dq[:, obs_dim:] * scale / s.shape[0]
                actor_opt.step(mlp_backward(ac.actor, s, upstream))
                soft_update(ac.actor_target, ac.actor, config.tau)
                soft_update(ac.q1_target, ac.critic_q1, config.tau)
                soft_update(ac.q2_target, ac.critic_q2, config.tau)

            if v_opt is not None:
                x_v = np.concatenate([s, ac.act(s)], axis=1)
                _critic_step(ac.value_head, v_opt, s, ac.critic_q1.forward(x_v)[:, 0])

        if done:
            if not np.isfinite(ep_return):
                raise DivergenceError(f"episode {episode} return is NaN",
                                      diagnostic={"step": t, "episode": episode})
            loss = float(np.mean(ep_losses)) if ep_losses else float("nan")
            log.append(episode, ep_return, loss)
            if progress_callback is not None:
                progress_callback(episode, ep_return)
            elif episode % config.log_every == 0:
                logger.info("td3 episode %d: return %.4f, critic loss %.4g", episode,
                            ep_return, loss)
            episode += 1
            ep_return, ep_losses = 0.0, []
            obs = env.reset(seed=int(rng.integers(2 ** 31)))
    return ac, log


# ==================== Supervised refits ====================


def fit_regressor(
    X: np.ndarray,
    y: np.ndarray,
    config: Optional[TrainConfig] = None,
    seed: int = 0,
    net: Optional[Mlp] = None,
) -> Tuple[Mlp, float]:
    """Least-squares fit of an MLP with minibatch Adam.

    Returns:
        (network, training MSE)
    """
    config = config or TrainConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise ValidationError("cannot fit on an empty dataset")
    rng = make_rng(seed)
    if net is None:
        net = Mlp([X.shape[1], *config.hidden_sizes, 1], config.activation,
                  seed=int(rng.integers(2 ** 31)))
    opt = Adam(net, config.fit_lr)
    n = y.size
    batch = min(config.fit_batch_size, n)
    for _ in range(config.fit_epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            err = net.forward(X[idx])[:, 0] - y[idx]
            opt.step(mlp_backward(net, X[idx], (2.0 * err / idx.size)[:, None]))
    mse = float(np.mean((net.forward(X)[:, 0] - y) ** 2))
    net.metadata["train_mse"] = mse
    return net, mse


def fit_advantage_estimator(
    dataset: Sequence[Tuple[Any, Any, float]],
    config: Optional[TrainConfig] = None,
    seed: int = 0,
) -> Mlp:
    """Regress advantages on [state, inferior action].

    The training MSE is stored in metadata["train_mse"].

    Raises:
        ValidationError: If the dataset is empty
    """
    if len(dataset) == 0:
        raise ValidationError("advantage dataset is empty")
    X = np.vstack([np.concatenate([np.ravel(s), np.ravel(a)]) for s, a, _ in dataset])
    y = np.array([label for _, _, label in dataset], dtype=float)
    net, mse = fit_regressor(X, y, config, seed)
    logger.info("advantage estimator fit on %d samples: mse %.4g", y.size, mse)
    return net


def collect_states(
    env: Any, policies: Sequence[Policy], episodes: int, seed: int
) -> List[Tuple[np.ndarray, Any]]:
    """(observation, snapshot) pairs visited by each policy over seeded episodes."""
    visited: List[Tuple[np.ndarray, Any]] = []
    for p_idx, policy in enumerate(policies):
        for ep_seed in derive_seeds(seed + p_idx, episodes):
            obs = env.reset(seed=ep_seed)
            done = False
            while not done:
                visited.append((np.asarray(obs, dtype=float).copy(), env.snapshot()))
                obs, _, done, _ = env.step(policy(obs))
    return visited


def finetune_q_montecarlo(
    ac: ActorCritic,
    env: Any,
    pi_inf: Policy,
    n_rollouts: int,
    seed: int = 0,
    n_states: int = 50,
    horizon: int = 200,
    episodes: int = 2,
) -> ActorCritic:
    """Refit both critics on Monte-Carlo returns of (state, a_inf) and (state, a_sup) starts.

    Start states are drawn uniformly from episodes of the actor. Each start is
    followed by the actor for the rest of the rollout.

    Args:
        ac: Trained actor-critic
        env: Environment with snapshot/restore
        pi_inf: Inferior policy over the same observations
        n_rollouts: Rollouts per (state, action) start
        seed: Random seed
        n_states: Number of start states
        horizon: Rollout length
        episodes: Collection episodes

    Returns:
        A copy of ac with refit critics

    Raises:
        ValidationError: If n_rollouts < 1
    """
    if n_rollouts < 1:
        raise ValidationError(f"n_rollouts must be >= 1, got {n_rollouts}")
    rng = make_rng(seed)
    pi_sup = ac.as_policy()
    visited = collect_states(env, [pi_sup], episodes, seed)
    picks = rng.choice(len(visited), size=min(n_states, len(visited)), replace=False)
    X, y = [], []
    for i in picks:
        obs, snap = visited[int(i)]
        for action in (np.asarray(pi_inf(obs), dtype=float), ac.act(obs)):
            seeds = derive_seeds(int(rng.integers(2 ** 31)), n_rollouts)
            G = [restart_return(env, snap, action, pi_sup, horizon, s) for s in seeds]
            X.append(np.concatenate([obs, np.ravel(action)]))
            y.append(float(np.mean(G)))
    refit = ac.copy()
    X_arr, y_arr = np.vstack(X), np.asarray(y)
    _, mse1 = fit_regressor(X_arr, y_arr, ac.config, seed, net=refit.critic_q1)
    _, mse2 = fit_regressor(X_arr, y_arr, ac.config, seed + 1, net=refit.critic_q2)
    refit.q1_target = refit.critic_q1.copy()
    refit.q2_target = refit.critic_q2.copy()
    logger.info("critics refit on %d Monte-Carlo targets: mse %.4g / %.4g", y_arr.size, mse1, mse2)
    return refit


def td_error(
    value_head: Union[Mlp, Callable[[np.ndarray], float]],
    transition: Tuple[Any, float, Any],
    gamma: float,
    done: bool = False,
) -> float:
    """delta = r + gamma V(s_next) - V(s); without bootstrap when done."""
    s, r, s_next = transition

    def v(x: Any) -> float:
        if isinstance(value_head, Mlp):
            return float(value_head.forward(np.asarray(x, dtype=float))[0])
        return float(value_head(np.asarray(x, dtype=float)))

    bootstrap = 0.0 if done else gamma * v(s_next)
    return float(r) + bootstrap - v(s)
