"""Tabular data structures: state grids, MDP tensors, value/Q/policy tables."""

import logging
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml

from cav.voi.exceptions import ContractViolationError, ValidationError
from cav.voi.utils import ensure_dir, make_rng, write_frame

logger = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class StateGrid:
    """Per-dimension grid points plus an action grid.

    States snap to the nearest point on every axis independently; ties go to the lower
    point. A value is flagged as clipped when it lies more than half a spacing beyond
    the outer points of an axis.

    Example:
        grid = StateGrid.from_axes([[-1, 0, 1], [0, 1]], actions=[[-1], [0], [1]])
        index, clipped = grid.snap(np.array([0.2, 0.9]))
    """

    points: Tuple[np.ndarray, ...]
    actions: np.ndarray

    @classmethod
    def from_axes(
        cls, axes: Sequence[Sequence[float]], actions: Sequence[Any]
    ) -> "StateGrid":
        """Build a grid from per-dimension point lists and an action list.

        Raises:
            ValidationError: If an axis or the action list is empty
        """
        points = []
        for i, axis in enumerate(axes):
            arr = np.sort(np.asarray(axis, dtype=float).ravel())
            if arr.size == 0:
                raise ValidationError(f"grid axis {i} is empty")
            points.append(arr)
        acts = np.asarray(actions, dtype=float)
        if acts.size == 0:
            raise ValidationError("action grid is empty")
        if acts.ndim == 1:
            acts = acts.reshape(-1, 1)
        return cls(points=tuple(points), actions=acts)

    @property
    def state_dim(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(p.size for p in self.points)

    @property
    def n_states(self) -> int:
        return int(np.prod(self.shape))

    @property
    def n_actions(self) -> int:
        return int(self.actions.shape[0])

    def snap_many(self, states: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Snap an (n, state_dim) array to flat cell indices.

        Returns:
            (indices, clipped) arrays of length n
        """
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if states.shape[1] != self.state_dim:
            raise ContractViolationError(
                f"state has dimension {states.shape[1]}, grid has {self.state_dim}",
                module="dp-solver",
            )
        multi = []
        clipped = np.zeros(states.shape[0], dtype=bool)
        for d, axis in enumerate(self.points):
            x = states[:, d]
            idx = np.argmin(np.abs(x[:, None] - axis[None, :]), axis=1)
            multi.append(idx)
            if axis.size > 1:
                low = axis[0] - (axis[1] - axis[0]) / 2.0
                high = axis[-1] + (axis[-1] - axis[-2]) / 2.0
                clipped |= (x < low) | (x > high)
        flat = np.ravel_multi_index(tuple(multi), self.shape)
        return flat.astype(int), clipped

    def snap(self, state: np.ndarray) -> Tuple[int, bool]:
        """Snap one state vector to its flat cell index."""
        idx, clipped = self.snap_many(np.asarray(state, dtype=float).reshape(1, -1))
        return int(idx[0]), bool(clipped[0])

    def state_of(self, index: int) -> np.ndarray:
        """Grid point of a flat cell index."""
        multi = np.unravel_index(int(index), self.shape)
        return np.array([axis[i] for axis, i in zip(self.points, multi)], dtype=float)

    def all_states(self) -> np.ndarray:
        """All grid points as an (n_states, state_dim) array in flat-index order."""
        mesh = np.meshgrid(*self.points, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def snap_action(self, action: np.ndarray) -> int:
        """Index of the nearest action grid point (Euclidean, ties to lower index)."""
        a = np.asarray(action, dtype=float).reshape(1, -1)
        return int(np.argmin(np.sum((self.actions - a) ** 2, axis=1)))


@dataclass(eq=False)
class TabularMdp:
    """Enumerated MDP: P[s, a, s'], R[s, a], gamma, init_dist.

    Example:
        mdp = TabularMdp(P=np.ones((1, 1, 1)), R=np.ones((1, 1)), gamma=0.9,
                         init_dist=np.ones(1))
    """

    P: np.ndarray
    R: np.ndarray
    gamma: float
    init_dist: np.ndarray

    # Discretization notes (clipped transitions, exo sample counts, ...)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.P = np.asarray(self.P, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.init_dist = np.asarray(self.init_dist, dtype=float).ravel()
        self.validate()

    @property
    def n_states(self) -> int:
        return int(self.P.shape[0])

    @property
    def n_actions(self) -> int:
        return int(self.P.shape[1])

    def validate(self) -> None:
        """Check shapes and that P rows and init_dist are distributions.

        Raises:
            ContractViolationError: On any violation
        """
        if self.P.ndim != 3 or self.P.shape[0] != self.P.shape[2]:
            raise ContractViolationError(f"P must be [S, A, S], got {self.P.shape}",
                                         module="dp-solver")
        if self.R.shape != self.P.shape[:2]:
            raise ContractViolationError(
                f"R must be {self.P.shape[:2]}, got {self.R.shape}", module="dp-solver"
            )
        if self.init_dist.shape != (self.n_states,):
            raise ContractViolationError("init_dist length must equal n_states",
                                         module="dp-solver")
        if not 0.0 <= self.gamma <= 1.0:
            raise ContractViolationError(f"gamma must be in [0, 1], got {self.gamma}",
                                         module="dp-solver")
        if np.any(self.P < 0):
            raise ContractViolationError("P has negative entries", module="dp-solver")
        sums = self.P.sum(axis=2)
        bad = np.argwhere(np.abs(sums - 1.0) > STOCHASTIC_TOL)
        if bad.size:
            s, a = bad[0]
            raise ContractViolationError(
                f"P[{s}, {a}, :] sums to {sums[s, a]!r}, expected 1", module="dp-solver"
            )
        if np.any(self.init_dist < 0) or abs(self.init_dist.sum() - 1.0) > STOCHASTIC_TOL:
            raise ContractViolationError("init_dist is not a distribution", module="dp-solver")

    def to_csv_dir(self, path: str) -> str:
        """Export as long-form P.csv, R.csv, init_dist.csv and meta.yaml.

        Args:
            path: Output directory

        Returns:
            The directory path
        """
        ensure_dir(path)
        s, a, s2 = np.nonzero(self.P)
        write_frame(
            pd.DataFrame({"s": s, "a": a, "s_next": s2, "p": self.P[s, a, s2]}),
            os.path.join(path, "P.csv"),
        )
        ss, aa = np.meshgrid(np.arange(self.n_states), np.arange(self.n_actions), indexing="ij")
        write_frame(
            pd.DataFrame({"s": ss.ravel(), "a": aa.ravel(), "r": self.R.ravel()}),
            os.path.join(path, "R.csv"),
        )
        write_frame(
            pd.DataFrame({"s": np.arange(self.n_states), "p": self.init_dist}),
            os.path.join(path, "init_dist.csv"),
        )
        meta = {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": float(self.gamma),
        }
        with open(os.path.join(path, "meta.yaml"), "w") as f:
            yaml.safe_dump(meta, f, sort_keys=True)
        return path

    @classmethod
    def from_csv_dir(cls, path: str) -> "TabularMdp":
        """Load a directory written by to_csv_dir.

        Raises:
            ValidationError: If a block is missing
        """
        try:
            with open(os.path.join(path, "meta.yaml")) as f:
                meta = yaml.safe_load(f)
            p_frame = pd.read_csv(os.path.join(path, "P.csv"))
            r_frame = pd.read_csv(os.path.join(path, "R.csv"))
            i_frame = pd.read_csv(os.path.join(path, "init_dist.csv"))
        except (OSError, pd.errors.EmptyDataError) as e:
            raise ValidationError(f"Cannot read tabular MDP from {path}: {e}") from e
        n_s, n_a = int(meta["n_states"]), int(meta["n_actions"])
        P = np.zeros((n_s, n_a, n_s))
        P[p_frame["s"].to_numpy(), p_frame["a"].to_numpy(), p_frame["s_next"].to_numpy()] = \
            p_frame["p"].to_numpy()
        R = np.zeros((n_s, n_a))
        R[r_frame["s"].to_numpy(), r_frame["a"].to_numpy()] = r_frame["r"].to_numpy()
        init = np.zeros(n_s)
        init[i_frame["s"].to_numpy()] = i_frame["p"].to_numpy()
        return cls(P=P, R=R, gamma=float(meta["gamma"]), init_dist=init)


@dataclass(eq=False)
class ValueTable:
    """State values V(s)."""

    values: np.ndarray

    def __getitem__(self, s: int) -> float:
        return float(self.values[s])

    def __len__(self) -> int:
        return int(self.values.shape[0])


@dataclass(eq=False)
class QTable:
    """Action values Q(s, a)."""

    values: np.ndarray

    def __getitem__(self, key: Tuple[int, int]) -> float:
        return float(self.values[key])

    @property
    def n_states(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_actions(self) -> int:
        return int(self.values.shape[1])


@dataclass(eq=False)
class PolicyTable:
    """Policy as an [S, A] matrix of action probabilities.

    Deterministic policies are one-hot rows.
    """

    probs: np.ndarray

    def __post_init__(self) -> None:
        self.probs = np.asarray(self.probs, dtype=float)
        sums = self.probs.sum(axis=1)
        if np.any(self.probs < 0) or np.any(np.abs(sums - 1.0) > 1e-9):
            raise ContractViolationError("policy rows must be distributions", module="dp-solver")

    @classmethod
    def deterministic(cls, actions: Sequence[int], n_actions: int) -> "PolicyTable":
        """One-hot policy from a per-state action index list."""
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.shape[0], n_actions))
        probs[np.arange(actions.shape[0]), actions] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "PolicyTable":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @property
    def n_states(self) -> int:
        return int(self.probs.shape[0])

    @property
    def n_actions(self) -> int:
        return int(self.probs.shape[1])

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all(np.isclose(self.probs.max(axis=1), 1.0)))

    @property
    def actions(self) -> np.ndarray:
        """Most likely action per state (lowest index on ties)."""
        return np.argmax(self.probs, axis=1)

    def action(self, s: int, rng: Optional[np.random.Generator] = None) -> int:
        """Pick the action for state s, sampling when the row is not one-hot."""
        row = self.probs[int(s)]
        if rng is None or np.isclose(row.max(), 1.0):
            return int(np.argmax(row))
        return int(rng.choice(row.shape[0], p=row))

    def as_policy(self, seed: Optional[int] = None) -> Callable[[np.ndarray], np.ndarray]:
        """Wrap as an observation-to-action map over index-valued observations."""
        rng = make_rng(seed) if not self.is_deterministic else None

        def policy(obs: np.ndarray) -> np.ndarray:
            return np.array([self.action(int(np.asarray(obs).ravel()[0]), rng)], dtype=float)

        return policy
