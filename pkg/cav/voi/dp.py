"""Exact tabular oracle: discretization, value iteration, policy evaluation, advantages."""

import copy
import logging
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from cav.voi.data.tables import PolicyTable, QTable, StateGrid, TabularMdp, ValueTable
from cav.voi.exceptions import ContractViolationError, UnsupportedError, ValidationError
from cav.voi.ssdp import ExoProcess, SpecLike, SsdpSpec, _as_spec
from cav.voi.utils import make_rng

logger = logging.getLogger(__name__)

MODULE = "dp-solver"

# Dense linear solves are used up to this many states
EXACT_SOLVE_LIMIT = 5000


# ==================== Discretization ====================


def discretize(
    spec: SpecLike,
    grid: StateGrid,
    exo_samples: int = 1,
    seed: int = 0,
    init_samples: int = 1000,
) -> TabularMdp:
    """Build a TabularMdp by snapping transitions of grid points to grid cells.

    The exogenous expectation is exact when the process declares an enumerable law
    (iid support or a state-conditional law); otherwise exo_samples iid draws are shared
    by all (state, action) pairs. The initial distribution is exact when the process
    declares an enumerable one and estimated from init_samples draws otherwise.

    Args:
        spec: Process to discretize
        grid: State and action grid
        exo_samples: Exogenous draws per (state, action) for sampled processes
        seed: Seed for sampled exogenous draws and initial states
        init_samples: Initial-state draws when the initial law is not enumerable

    Returns:
        TabularMdp whose metadata records clipped transitions

    Raises:
        ValidationError: If exo_samples < 1
        ContractViolationError: If grid and spec dimensions disagree
        UnsupportedError: If the exogenous process cannot be sampled independently
    """
    spec = _as_spec(spec)
    if exo_samples < 1:
        raise ValidationError(f"exo_samples must be >= 1, got {exo_samples}")
    if grid.state_dim != spec.state_dim:
        raise ContractViolationError(
            f"grid has {grid.state_dim} dimensions, spec state has {spec.state_dim}",
            module=MODULE,
        )
    if grid.actions.shape[1] != spec.action_dim:
        raise ContractViolationError(
            f"action grid has dimension {grid.actions.shape[1]}, spec has {spec.action_dim}",
            module=MODULE,
        )

    rng = make_rng(seed)
    exo = spec.exo_process
    shared: Optional[Tuple[np.ndarray, np.ndarray]] = None
    if spec.exo_given_state is not None:
        mode = "conditional"
    elif getattr(exo, "is_enumerable", False):
        mode = "enumerated"
        shared = (exo.support, exo.probs)
    elif isinstance(exo, ExoProcess) and exo.sampler is not None:
        mode = "sampled"
        stream = exo.stream(rng)
        draws = np.vstack([stream.draw() for _ in range(exo_samples)])
        shared = (draws, np.full(exo_samples, 1.0 / exo_samples))
    else:
        raise UnsupportedError(
            f"{spec.name}: discretize needs iid or state-conditional exogenous information; "
            "augment the process first"
        )

    states = grid.all_states()
    n_s, n_a = grid.n_states, grid.n_actions
    P = np.zeros((n_s, n_a, n_s))
    R = np.zeros((n_s, n_a))
    clipped = 0
    for i, s in enumerate(states):
        support, probs = shared if shared is not None else spec.exo_given_state(s)
        support = np.asarray(support, dtype=float)
        if support.ndim == 1:
            support = support.reshape(-1, 1)
        probs = np.asarray(probs, dtype=float)
        for j, a in enumerate(grid.actions):
            nexts = np.vstack([spec.transition(s, a, w) for w in support])
            rewards = np.array([spec.reward(s, a, w) for w in support], dtype=float)
            idx, clip = grid.snap_many(nexts)
            np.add.at(P[i, j], idx, probs)
            R[i, j] = float(np.dot(probs, rewards))
            clipped += int(clip.sum())
    P /= P.sum(axis=2, keepdims=True)

    init = _initial_distribution(spec, grid, rng, init_samples)
    if clipped:
        logger.warning("%s: %d transitions left the grid and were clipped", spec.name, clipped)
    metadata: Dict[str, Any] = {
        "clipped_transitions": clipped,
        "exo_mode": mode,
        "exo_samples": exo_samples if mode == "sampled" else None,
        "grid_shape": list(grid.shape),
    }
    return TabularMdp(P=P, R=R, gamma=spec.gamma, init_dist=init, metadata=metadata)


def _initial_distribution(
    spec: SsdpSpec, grid: StateGrid, rng: np.random.Generator, n: int
) -> np.ndarray:
    init = np.zeros(grid.n_states)
    dist = spec.initial_distribution()
    if dist is not None:
        support, probs = dist
        idx, _ = grid.snap_many(support)
        np.add.at(init, idx, probs)
    else:
        for _ in range(n):
            s0 = spec.initial_state(rng, spec.exo_process.stream(rng))
            init[grid.snap(s0)[0]] += 1.0
    return init / init.sum()


# ==================== Solvers ====================


def _greedy(Q: np.ndarray) -> np.ndarray:
    """Greedy action per row, lowest index among numerical ties."""
    best = Q.max(axis=1, keepdims=True)
    ties = Q >= best - 1e-12 * np.maximum(1.0, np.abs(best))
    return np.argmax(ties, axis=1)


def _bellman_q(mdp: TabularMdp, V: np.ndarray) -> np.ndarray:
    return mdp.R + mdp.gamma * np.einsum("sat,t->sa", mdp.P, V)


def value_iteration(
    mdp: TabularMdp, tol: float = 1e-10, max_iter: int = 1_000_000
) -> Tuple[ValueTable, PolicyTable]:
    """Optimal values and a greedy policy.

    Args:
        mdp: Tabular MDP
        tol: Sup-norm Bellman residual bound of the returned values
        max_iter: Sweep limit

    Returns:
        (ValueTable, deterministic PolicyTable)

    Raises:
        ContractViolationError: If P is not row-stochastic, tol <= 0, or sweeps do not
            converge within max_iter
    """
    mdp.validate()
    if not tol > 0:
        raise ContractViolationError(f"tol must be > 0, got {tol}", module=MODULE)
    V = np.zeros(mdp.n_states)
    for sweep in range(1, max_iter + 1):
        V_new = _bellman_q(mdp, V).max(axis=1)
        residual = float(np.max(np.abs(V_new - V))) if V.size else 0.0
        V = V_new
        if residual <= tol:
            logger.debug("value iteration converged after %d sweeps", sweep)
            break
    else:
        raise ContractViolationError(
            f"value iteration did not reach tol={tol} in {max_iter} sweeps", module=MODULE
        )
    Q = _bellman_q(mdp, V)
    policy = PolicyTable.deterministic(_greedy(Q), mdp.n_actions)
    return ValueTable(V), policy


def _policy_matrices(mdp: TabularMdp, policy: PolicyTable) -> Tuple[np.ndarray, np.ndarray]:
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ContractViolationError(
            f"policy shape {policy.probs.shape} does not match MDP "
            f"({mdp.n_states}, {mdp.n_actions})",
            module=MODULE,
        )
    P_pi = np.einsum("sa,sat->st", policy.probs, mdp.P)
    R_pi = np.sum(policy.probs * mdp.R, axis=1)
    return P_pi, R_pi


def policy_evaluation(
    mdp: TabularMdp,
    policy: PolicyTable,
    tol: float = 1e-10,
    exact: Optional[bool] = None,
    max_iter: int = 1_000_000,
) -> ValueTable:
    """Values of a fixed policy.

    Args:
        mdp: Tabular MDP
        policy: Policy to evaluate
        tol: Residual bound for the iterative path
        exact: Force (True) or skip (False) the dense solve; by default it is used up to
            5000 states
        max_iter: Sweep limit of the iterative path

    Returns:
        ValueTable
    """
    mdp.validate()
    P_pi, R_pi = _policy_matrices(mdp, policy)
    n = mdp.n_states
    use_exact = exact if exact is not None else n <= EXACT_SOLVE_LIMIT
    if use_exact:
        try:
            V = np.linalg.solve(np.eye(n) - mdp.gamma * P_pi, R_pi)
            return ValueTable(V)
        except np.linalg.LinAlgError:
            logger.info("singular policy system, falling back to iterative evaluation")
    V = np.zeros(n)
    for _ in range(max_iter):
        V_new = R_pi + mdp.gamma * P_pi @ V
        if float(np.max(np.abs(V_new - V))) <= tol:
            return ValueTable(V_new)
        V = V_new
    raise ContractViolationError(f"policy evaluation did not converge in {max_iter} sweeps",
                                 module=MODULE)


def q_from_v(mdp: TabularMdp, V: ValueTable) -> QTable:
    """Q(s, a) = R[s, a] + gamma * sum_s' P[s, a, s'] V(s')."""
    return QTable(_bellman_q(mdp, np.asarray(V.values, dtype=float)))


def advantage_table(Q: QTable, V: ValueTable) -> QTable:
    """A(s, a) = Q(s, a) - V(s)."""
    return QTable(Q.values - np.asarray(V.values)[:, None])


def exact_performance(mdp: TabularMdp, policy: PolicyTable) -> float:
    """J = sum_s init_dist(s) V_pi(s) via the exact policy evaluation."""
    V = policy_evaluation(mdp, policy, exact=True)
    return float(np.dot(mdp.init_dist, V.values))


def optimal_performance(mdp: TabularMdp, tol: float = 1e-12) -> float:
    """J* of the greedy policy from value iteration."""
    _, policy = value_iteration(mdp, tol=tol)
    return exact_performance(mdp, policy)


def occupancy(mdp: TabularMdp, policy: PolicyTable) -> np.ndarray:
    """Unnormalized discounted occupancy d = init_dist^T (I - gamma P_pi)^-1.

    Raises:
        ContractViolationError: If gamma >= 1
    """
    if mdp.gamma >= 1.0:
        raise ContractViolationError("discounted occupancy needs gamma < 1", module=MODULE)
    P_pi, _ = _policy_matrices(mdp, policy)
    return np.linalg.solve((np.eye(mdp.n_states) - mdp.gamma * P_pi).T, mdp.init_dist)


def performance_difference(
    mdp: TabularMdp, pi_inf: PolicyTable, pi_sup: PolicyTable
) -> Tuple[float, float]:
    """Both sides of the performance difference identity.

    Returns:
        (J_inf - J_sup, sum_s d_inf(s) sum_a pi_inf(a|s) A_sup(s, a))

    Raises:
        ContractViolationError: If gamma >= 1
    """
    if mdp.gamma >= 1.0:
        raise ContractViolationError("performance difference needs gamma < 1", module=MODULE)
    V_sup = policy_evaluation(mdp, pi_sup, exact=True)
    A_sup = advantage_table(q_from_v(mdp, V_sup), V_sup).values
    J_inf = exact_performance(mdp, pi_inf)
    J_sup = float(np.dot(mdp.init_dist, V_sup.values))
    d = occupancy(mdp, pi_inf)
    weighted = float(np.dot(d, np.sum(pi_inf.probs * A_sup, axis=1)))
    return J_inf - J_sup, weighted


def grid_policy(grid: StateGrid, policy: PolicyTable) -> Callable[[np.ndarray], np.ndarray]:
    """Controller that snaps a continuous state to the grid and plays the table's action."""

    def act(obs: np.ndarray) -> np.ndarray:
        index, _ = grid.snap(np.asarray(obs, dtype=float).ravel()[: grid.state_dim])
        return grid.actions[policy.action(index)].copy()

    return act


# ==================== Random instances ====================


def random_mdp(n_states: int, n_actions: int, gamma: float = 0.9, seed: int = 0) -> TabularMdp:
    """Random MDP with Dirichlet transition rows, uniform rewards in [-1, 1]."""
    rng = make_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    init = rng.dirichlet(np.ones(n_states))
    return TabularMdp(P=P, R=R, gamma=gamma, init_dist=init / init.sum())


def random_tabular_ssdp(
    n_states: int, n_actions: int, n_exo: int, gamma: float = 0.9, seed: int = 0
) -> Tuple[SsdpSpec, StateGrid, StateGrid]:
    """Random enumerable SSDP with integer states and iid integer exogenous values.

    Next states F[s, a, w] and rewards G[s, a, w] are drawn once per seed.

    Returns:
        (spec, grid over S, grid over (S, W) for the with-W augmentation)
    """
    rng = make_rng(seed)
    F = rng.integers(n_states, size=(n_states, n_actions, n_exo))
    G = rng.uniform(-1.0, 1.0, size=(n_states, n_actions, n_exo))
    exo_probs = rng.dirichlet(np.ones(n_exo))
    exo_probs /= exo_probs.sum()
    init_probs = rng.dirichlet(np.ones(n_states))
    init_probs /= init_probs.sum()

    def transition(s: np.ndarray, a: np.ndarray, w: np.ndarray) -> np.ndarray:
        return np.array([float(F[int(s[0]), int(a[0]), int(w[0])])])

    def reward(s: np.ndarray, a: np.ndarray, w: np.ndarray) -> float:
        return float(G[int(s[0]), int(a[0]), int(w[0])])

    spec = SsdpSpec(
        state_dim=1,
        action_dim=1,
        transition=transition,
        reward=reward,
        exo_process=ExoProcess.iid(np.arange(n_exo, dtype=float), exo_probs),
        gamma=gamma,
        action_low=np.array([0.0]),
        action_high=np.array([float(n_actions - 1)]),
        init_support=np.arange(n_states, dtype=float).reshape(-1, 1),
        init_probs=init_probs,
        name=f"random-ssdp-{seed}",
    )
    actions = np.arange(n_actions, dtype=float)
    grid = StateGrid.from_axes([np.arange(n_states)], actions)
    aug_grid = StateGrid.from_axes([np.arange(n_states), np.arange(n_exo)], actions)
    return spec, grid, aug_grid


# ==================== Simulation ====================


class TabularEnv:
    """Sampling simulator of a TabularMdp with snapshot/restore.

    Observations are the state index as a length-1 float vector; actions are action
    indices. Next states are drawn by inverse CDF from one uniform per step, so paired
    runs under a shared seed use common random numbers.

    With continuing=True the MDP is treated as infinite-horizon: horizon only cuts
    episodes into pieces, and restore starts a fresh piece so that every restart runs
    the full horizon.
    """

    action_dim = 1

    def __init__(self, mdp: TabularMdp, horizon: int = 200, continuing: bool = False):
        self.mdp = mdp
        self.horizon = horizon
        self.continuing = continuing
        self._cdf = np.cumsum(mdp.P, axis=2)
        self._rng: Optional[np.random.Generator] = None
        self._state = 0
        self.k = 0

    @property
    def gamma(self) -> float:
        return self.mdp.gamma

    @property
    def observation_dim(self) -> int:
        return 1

    @property
    def action_low(self) -> np.ndarray:
        return np.array([0.0])

    @property
    def action_high(self) -> np.ndarray:
        return np.array([float(self.mdp.n_actions - 1)])

    @property
    def state(self) -> np.ndarray:
        return np.array([float(self._state)])

    def reset(self, seed: Optional[int] = None, state: Optional[Any] = None) -> np.ndarray:
        self._rng = make_rng(seed)
        if state is not None:
            self._state = int(np.asarray(state).ravel()[0])
        else:
            cdf = np.cumsum(self.mdp.init_dist)
            self._state = int(min(np.searchsorted(cdf, self._rng.random(), side="right"),
                                  self.mdp.n_states - 1))
        self.k = 0
        return self.state

    def step(self, action: Any) -> Tuple[np.ndarray, float, bool, Dict[str, Any]]:
        a = int(np.clip(round(float(np.asarray(action).ravel()[0])), 0, self.mdp.n_actions - 1))
        s = self._state
        r = float(self.mdp.R[s, a])
        u = self._rng.random()
        self._state = int(min(np.searchsorted(self._cdf[s, a], u, side="right"),
                              self.mdp.n_states - 1))
        self.k += 1
        return self.state, r, self.k >= self.horizon, {"state": np.array([float(s)])}

    def snapshot(self) -> Dict[str, Any]:
        return {"state": self._state, "k": self.k, "rng": copy.deepcopy(self._rng)}

    def restore(self, snap: Dict[str, Any], seed: Optional[int] = None) -> np.ndarray:
        self._state = snap["state"]
        self.k = 0 if self.continuing else snap["k"]
        self._rng = make_rng(seed) if seed is not None else copy.deepcopy(snap["rng"])
        return self.state
