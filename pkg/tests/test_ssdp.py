"""Tests for process descriptions, rollouts, augmentations and the Markov check."""

import logging

import numpy as np
import pytest

from cav.voi.data.enums import AugmentationKind
from cav.voi.data.tables import StateGrid
from cav.voi.exceptions import ContractViolationError, UnsupportedError
from cav.voi.ssdp import (
    DelayedExoProcess,
    ExoProcess,
    SsdpEnv,
    SsdpSpec,
    augment_random_delay,
    augment_with_exogenous,
    augment_with_predictor,
    check_markov,
    discounted_return,
    restart_return,
    rollout,
    step,
)


def hold(s):
    return np.array([0.0])


class TestExoProcess:
    """Constructors and streams of exogenous processes."""

    def test_iid_rejects_empty_support(self):
        with pytest.raises(ContractViolationError):
            ExoProcess.iid([])

    def test_iid_rejects_non_distribution(self):
        with pytest.raises(ContractViolationError):
            ExoProcess.iid([0.0, 1.0], [0.5, 0.6])

    def test_constant_always_yields_value(self):
        stream = ExoProcess.constant(2.5).stream(0)
        draws = [float(stream.draw()[0]) for _ in range(5)]
        assert draws == [2.5] * 5

    def test_driven_needs_a_step_law(self):
        with pytest.raises(ContractViolationError):
            ExoProcess.driven(1, lambda rng: np.zeros(1), lambda wt: wt)

    def test_trace_is_exhausted_without_loop(self):
        stream = ExoProcess.from_trace([1.0, 2.0]).stream(0)
        stream.draw()
        stream.draw()
        with pytest.raises(ContractViolationError):
            stream.draw()

    def test_trace_loops_when_asked(self):
        stream = ExoProcess.from_trace([1.0, 2.0], loop=True).stream(0)
        draws = [float(stream.draw()[0]) for _ in range(4)]
        assert draws == [1.0, 2.0, 1.0, 2.0]

    def test_structural_declarations(self):
        assert ExoProcess.iid([0.0]).structurally_markov is True
        driven = ExoProcess.driven(1, lambda rng: np.zeros(1), lambda wt: wt,
                                   wtilde_step=lambda wt, w, rng: wt,
                                   history_dependent=True)
        assert driven.structurally_markov is False
        assert ExoProcess.from_trace([0.0]).structurally_markov is None

    def test_only_driven_processes_have_a_predictor(self):
        with pytest.raises(UnsupportedError):
            ExoProcess.iid([0.0, 1.0]).predictor_process()


class TestSpecContract:
    """Construction-time checks of SsdpSpec."""

    def _spec(self, **kwargs):
        defaults = dict(state_dim=1, action_dim=1, transition=lambda s, a, w: s,
                        reward=lambda s, a, w: 0.0, exo_process=ExoProcess.constant(0.0),
                        gamma=0.9, horizon=10)
        defaults.update(kwargs)
        return SsdpSpec(**defaults)

    def test_gamma_out_of_range(self):
        with pytest.raises(ContractViolationError):
            self._spec(gamma=1.5)

    def test_unbounded_needs_discount(self):
        with pytest.raises(ContractViolationError):
            self._spec(gamma=1.0, horizon=None)

    def test_zero_horizon(self):
        with pytest.raises(ContractViolationError):
            self._spec(horizon=0)

    def test_step_checks_dimensions(self, line_spec):
        with pytest.raises(ContractViolationError):
            step(line_spec, [0.0, 1.0], [0.0], [1.0])

    def test_step_applies_transition_and_reward(self, line_spec):
        s_next, r = step(line_spec, [2.0], [1.0], [-1.0])
        np.testing.assert_allclose(s_next, [2.0])
        assert r == -2.0


class TestRollout:
    """Seeded rollouts and discounted returns."""

    def test_same_seed_same_trajectory(self, line_spec):
        a = rollout(line_spec, hold, seed=5)
        b = rollout(line_spec, hold, seed=5)
        assert len(a) == line_spec.horizon
        np.testing.assert_array_equal(a.rewards, b.rewards)
        np.testing.assert_array_equal(a.states, b.states)

    def test_actions_are_clamped(self, line_spec):
        traj = rollout(line_spec, lambda s: np.array([5.0]), horizon=3, seed=0)
        assert traj.clamp_count == 3
        assert all(rec.a[0] == 1.0 for rec in traj.steps)

    def test_discounted_return(self):
        np.testing.assert_allclose(discounted_return([1.0, 1.0, 1.0], 0.5), 1.75)
        assert discounted_return([], 0.9) == 0.0

    def test_discounted_return_rejects_gamma(self):
        with pytest.raises(ContractViolationError):
            discounted_return([1.0], 1.5)


class TestEnv:
    """Snapshot and restore of the step-wise environment."""

    def test_restore_replays_with_reseed(self, line_spec):
        env = SsdpEnv(line_spec)
        env.reset(seed=3)
        env.step([0.5])
        snap = env.snapshot()
        first = restart_return(env, snap, [0.0], hold, horizon=10, seed=11)
        second = restart_return(env, snap, [0.0], hold, horizon=10, seed=11)
        assert first == second

    def test_episode_ends_at_horizon(self, line_spec):
        env = SsdpEnv(line_spec, horizon=4)
        env.reset(seed=0)
        dones = [env.step([0.0])[2] for _ in range(4)]
        assert dones == [False, False, False, True]


class TestAugmentations:
    """State augmentations with W_k, the predictor and random delays."""

    def test_with_exogenous_carries_current_sample(self, line_spec):
        aug = augment_with_exogenous(line_spec)
        assert aug.kind == AugmentationKind.WITH_W
        assert aug.augmented_state_dim == 2
        traj = rollout(aug, hold, seed=1)
        for rec in traj.steps:
            np.testing.assert_allclose(rec.s_next[1:], rec.w)
            np.testing.assert_allclose(rec.s_next[:1], rec.s[:1] + rec.a + rec.s[1:])

    def test_predictor_dimension_zero_is_identity(self, line_spec):
        aug = augment_with_predictor(line_spec, 0)
        assert aug.spec is line_spec

    def test_predictor_needs_driven_process(self, line_spec):
        with pytest.raises(UnsupportedError):
            augment_with_predictor(line_spec, 1)

    def test_delay_state_layout(self, line_spec):
        aug = augment_random_delay(line_spec, 3, ExoProcess.iid([1, 2, 3]))
        assert aug.augmented_state_dim == 1 + 1 + 3 + 1
        traj = rollout(aug, hold, seed=2)
        taus = traj.states[:, -1]
        assert np.all((taus >= 1) & (taus <= 3))
        assert np.all(np.diff(taus) <= 1)

    def test_delay_grows_by_at_most_one(self, line_spec):
        aug = augment_random_delay(line_spec, 3, ExoProcess.constant(3))
        traj = rollout(aug, hold, horizon=4, seed=0)
        np.testing.assert_array_equal(traj.states[:, -1], [1, 2, 3, 3, 3])

    def test_capped_delay_draws_are_counted(self, line_spec, caplog):
        caplog.set_level(logging.DEBUG, logger="cav.voi.ssdp")
        stream = DelayedExoProcess(line_spec.exo_process, ExoProcess.constant(3), 3).stream(0)
        stream.first()
        taus = [stream.draw()[-1] for _ in range(4)]
        assert taus == [2.0, 3.0, 3.0, 3.0]
        assert stream.capped == 1
        assert any("capped to 2" in r.getMessage() for r in caplog.records)

    def test_delay_draw_out_of_range(self, line_spec):
        aug = augment_random_delay(line_spec, 2, ExoProcess.constant(5))
        with pytest.raises(ContractViolationError):
            rollout(aug, hold, horizon=2, seed=0)

    def test_delay_rejects_zero_tau_max(self, line_spec):
        with pytest.raises(ContractViolationError):
            augment_random_delay(line_spec, 0, ExoProcess.constant(1))


class TestCheckMarkov:
    """Structural and empirical Markov verdicts."""

    def test_needs_a_grid(self, line_spec):
        with pytest.raises(UnsupportedError):
            check_markov(line_spec, None)

    def test_needs_enough_samples(self, line_spec):
        grid = StateGrid.from_axes([np.arange(-5.0, 6.0)], [[-1.0], [0.0], [1.0]])
        with pytest.raises(ContractViolationError):
            check_markov(line_spec, grid, n_samples=100)

    def test_iid_walk_is_markov(self, line_spec):
        grid = StateGrid.from_axes([np.arange(-5.0, 6.0)], [[-1.0], [0.0], [1.0]])
        report = check_markov(line_spec, grid, seed=0)
        assert report.is_markov
        assert report.structural is True
        assert report.n_samples == 10_000
