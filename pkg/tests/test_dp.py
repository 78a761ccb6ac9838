"""Tests for discretization, dynamic programming and tabular identities."""

import numpy as np
import pytest

from cav.voi.data.tables import PolicyTable, StateGrid, TabularMdp
from cav.voi.dp import (
    TabularEnv,
    advantage_table,
    discretize,
    exact_performance,
    optimal_performance,
    performance_difference,
    policy_evaluation,
    q_from_v,
    random_mdp,
    random_tabular_ssdp,
    value_iteration,
)
from cav.voi.exceptions import ContractViolationError, UnsupportedError, ValidationError
from cav.voi.ssdp import ExoProcess, SsdpSpec, augment_with_exogenous


class TestStateGrid:
    """Snapping continuous states to grid cells."""

    def test_snap_to_nearest_point(self):
        grid = StateGrid.from_axes([[-1.0, 0.0, 1.0], [0.0, 1.0]], [0.0])
        index, clipped = grid.snap([0.2, 0.9])
        assert index == 3
        assert not clipped
        np.testing.assert_allclose(grid.state_of(index), [0.0, 1.0])

    def test_ties_snap_to_lower_point(self):
        grid = StateGrid.from_axes([[0.0, 1.0]], [0.0])
        assert grid.snap([0.5])[0] == 0

    def test_far_points_are_clipped(self):
        grid = StateGrid.from_axes([[-1.0, 0.0, 1.0]], [0.0])
        index, clipped = grid.snap([5.0])
        assert index == 2
        assert clipped

    def test_empty_axis(self):
        with pytest.raises(ValidationError):
            StateGrid.from_axes([[]], [0.0])


class TestTabularMdp:
    """Structural validation and export of tabular MDPs."""

    def test_rows_must_be_stochastic(self):
        P = np.full((2, 1, 2), 0.4)
        with pytest.raises(ContractViolationError):
            TabularMdp(P=P, R=np.zeros((2, 1)), gamma=0.9, init_dist=[0.5, 0.5])

    def test_csv_directory_round_trip(self, tmp_path):
        mdp = random_mdp(5, 2, gamma=0.8, seed=3)
        loaded = TabularMdp.from_csv_dir(mdp.to_csv_dir(str(tmp_path / "mdp")))
        np.testing.assert_allclose(loaded.P, mdp.P)
        np.testing.assert_allclose(loaded.R, mdp.R)
        np.testing.assert_allclose(loaded.init_dist, mdp.init_dist)
        assert loaded.gamma == 0.8

    def test_missing_directory(self, tmp_path):
        with pytest.raises(ValidationError):
            TabularMdp.from_csv_dir(str(tmp_path / "absent"))


class TestSolvers:
    """Value iteration and policy evaluation."""

    def test_single_state_geometric_value(self):
        mdp = TabularMdp(P=np.ones((1, 1, 1)), R=np.ones((1, 1)), gamma=0.9,
                         init_dist=np.ones(1))
        V, policy = value_iteration(mdp, tol=1e-12)
        np.testing.assert_allclose(V.values, [10.0], atol=1e-9)
        assert policy.is_deterministic

    def test_rejects_non_positive_tolerance(self):
        with pytest.raises(ContractViolationError):
            value_iteration(random_mdp(3, 2), tol=0.0)

    def test_exact_and_iterative_evaluation_agree(self):
        mdp = random_mdp(12, 3, gamma=0.9, seed=1)
        policy = PolicyTable.uniform(12, 3)
        exact = policy_evaluation(mdp, policy, exact=True)
        iterative = policy_evaluation(mdp, policy, tol=1e-12, exact=False)
        np.testing.assert_allclose(exact.values, iterative.values, atol=1e-9)

    def test_optimal_policy_has_no_positive_advantage(self):
        mdp = random_mdp(10, 3, gamma=0.9, seed=2)
        V, policy = value_iteration(mdp, tol=1e-12)
        A = advantage_table(q_from_v(mdp, V), V)
        assert A.values.max() <= 1e-8
        V_pi = policy_evaluation(mdp, policy, exact=True)
        np.testing.assert_allclose(V_pi.values, V.values, atol=1e-8)

    def test_optimal_beats_uniform(self):
        mdp = random_mdp(8, 3, gamma=0.9, seed=4)
        assert optimal_performance(mdp) >= exact_performance(mdp, PolicyTable.uniform(8, 3))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_performance_difference_identity(self, seed):
        mdp = random_mdp(15, 3, gamma=0.9, seed=seed)
        rng = np.random.default_rng(seed)
        pi_inf = PolicyTable.deterministic(rng.integers(3, size=15), 3)
        _, pi_sup = value_iteration(mdp, tol=1e-12)
        lhs, rhs = performance_difference(mdp, pi_inf, pi_sup)
        assert abs(lhs - rhs) <= 1e-8
        assert lhs <= 1e-8

    def test_performance_difference_needs_discount(self):
        mdp = random_mdp(3, 2, gamma=0.9)
        mdp.gamma = 1.0
        policy = PolicyTable.uniform(3, 2)
        with pytest.raises(ContractViolationError):
            performance_difference(mdp, policy, policy)


class TestDiscretize:
    """Building tabular MDPs from enumerable processes."""

    def test_enumerated_exogenous_law(self):
        spec, grid, _ = random_tabular_ssdp(6, 2, 3, seed=0)
        mdp = discretize(spec, grid)
        assert mdp.metadata["exo_mode"] == "enumerated"
        assert mdp.metadata["clipped_transitions"] == 0
        np.testing.assert_allclose(mdp.P.sum(axis=2), 1.0, atol=1e-12)
        np.testing.assert_allclose(mdp.init_dist, spec.init_probs, atol=1e-12)

    def test_augmenting_with_exogenous_is_never_worse(self):
        for seed in range(3):
            spec, grid, aug_grid = random_tabular_ssdp(5, 2, 3, gamma=0.9, seed=seed)
            base = optimal_performance(discretize(spec, grid))
            aug = optimal_performance(discretize(augment_with_exogenous(spec), aug_grid))
            assert aug >= base - 1e-10

    def test_rejects_zero_exo_samples(self):
        spec, grid, _ = random_tabular_ssdp(4, 2, 2)
        with pytest.raises(ValidationError):
            discretize(spec, grid, exo_samples=0)

    def test_dimension_mismatch(self):
        spec, _, aug_grid = random_tabular_ssdp(4, 2, 2)
        with pytest.raises(ContractViolationError):
            discretize(spec, aug_grid)

    def test_trace_process_is_unsupported(self):
        spec = SsdpSpec(state_dim=1, action_dim=1, transition=lambda s, a, w: s + w,
                        reward=lambda s, a, w: 0.0, exo_process=ExoProcess.from_trace([0.0]),
                        gamma=0.9, horizon=5)
        grid = StateGrid.from_axes([[0.0, 1.0]], [0.0])
        with pytest.raises(UnsupportedError):
            discretize(spec, grid)


class TestTabularEnv:
    """Common random numbers in the tabular simulator."""

    def test_same_seed_same_path(self):
        env = TabularEnv(random_mdp(6, 2, seed=5), horizon=10)
        paths = []
        for _ in range(2):
            obs = env.reset(seed=9)
            path = [float(obs[0])]
            for _ in range(10):
                obs, _, done, _ = env.step([1])
                path.append(float(obs[0]))
            paths.append(path)
            assert done
        assert paths[0] == paths[1]
