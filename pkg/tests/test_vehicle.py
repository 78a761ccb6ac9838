"""Tests for the vehicle-following dynamics, rewards, observations and environment."""

import numpy as np
import pytest

from cav.voi.data.enums import ReceiverFallback
from cav.voi.data.params import RewardWeights, VehicleParams
from cav.voi.exceptions import ContractViolationError, ValidationError
from cav.voi.predecessor import PredecessorTrajectory, synth_stop_and_go
from cav.voi.ssdp import rollout
from cav.voi.vehicle import (
    EPISODE_COLUMNS,
    ObservationHistory,
    ObservationModel,
    VehicleFollowingEnv,
    build_case2_spec,
    build_case4_spec,
    control_errors,
    desired_headway,
    dynamics_step,
    headway,
    observe,
    reward,
)


class TestDynamics:
    """Discrete-time follower model."""

    def test_params_reject_unstable_step(self):
        with pytest.raises(ContractViolationError):
            VehicleParams(rho=0.1, T=0.1)

    def test_matrices(self):
        A, B, C = VehicleParams().matrices()
        np.testing.assert_allclose(A, [[1.0, 0.1, -0.1], [0.0, 1.0, -0.1], [0.0, 0.0, 0.8]])
        np.testing.assert_allclose(B, [0.0, 0.0, 0.2])
        np.testing.assert_allclose(C, [0.0, 0.1, 0.0])

    def test_free_acceleration_decay(self):
        """With u = 0 and acc_pred = 0 the acceleration decays geometrically."""
        p = VehicleParams()
        x = np.array([0.0, 0.0, 2.0])
        for n in range(1, 31):
            x = dynamics_step(x, 0.0, 0.0, p).as_array()
            np.testing.assert_allclose(x[2], 2.0 * p.decay ** n, rtol=0, atol=1e-12)

    def test_acceleration_clamp_is_flagged(self):
        p = VehicleParams()
        nxt = dynamics_step([0.0, 0.0, 3.0], 50.0, 0.0, p)
        assert nxt.clamped
        assert nxt.acc == p.acc_max

    def test_short_state_raises(self):
        with pytest.raises(ContractViolationError):
            dynamics_step([0.0, 0.0], 0.0, 0.0, VehicleParams())

    def test_headway_and_errors(self):
        p = VehicleParams()
        assert desired_headway(10.0, p) == 12.0
        d = headway(50.0, 30.0, p.L_pred)
        assert d == 15.0
        assert control_errors(d, 12.0, 11.0, 10.0) == (3.0, 1.0)


class TestReward:
    """Normalized magnitude penalties."""

    def test_zero_at_rest(self):
        assert reward([0.0, 0.0, 0.0], 0.0, VehicleParams(), RewardWeights()) == 0.0

    def test_weighted_terms(self):
        p, w = VehicleParams(), RewardWeights()
        r = reward([15.0, -10.0, 0.0], 3.0, p, w)
        jerk_term = (3.0 / 0.5) / (2.0 * 3.0 / 0.1)
        np.testing.assert_allclose(r, -(1.0 + 1.0 + 1.0 + jerk_term))

    def test_huber_squares_small_terms(self):
        p = VehicleParams()
        w = RewardWeights(huber_delta=1.0)
        np.testing.assert_allclose(reward([7.5, 0.0, 0.0], 0.0, p, w), -0.25)


class TestObservations:
    """Full, missing and last-received views of the predecessor slot."""

    state = np.array([1.0, 2.0, 0.5, -1.5])

    def test_full(self):
        np.testing.assert_array_equal(observe(self.state, ObservationModel.full()), self.state)

    def test_missing_uses_dummy(self):
        obs = observe(self.state, ObservationModel.missing(dummy_value=9.0))
        np.testing.assert_array_equal(obs, [1.0, 2.0, 0.5, 9.0])

    def test_last_received(self):
        history = ObservationHistory()
        for acc in (0.1, 0.2, 0.3):
            history.record_sample(acc)
        history.record_action(1.0)
        history.record_action(2.0)
        model = ObservationModel.last_received(tau_max=3)
        obs = observe(self.state, model, history, tau=2)
        np.testing.assert_allclose(obs, [1.0, 2.0, 0.5, 0.1, 0.0, 1.0, 2.0, 2.0])
        assert obs.size == model.observation_dim()

    def test_stale_slot_reads_dummy_with_dummy_fallback(self):
        history = ObservationHistory(samples=[0.1, 0.2, 0.3])
        model = ObservationModel.last_received(2, fallback=ReceiverFallback.DUMMY,
                                               dummy_value=-7.0)
        assert observe(self.state, model, history, tau=2)[3] == -7.0
        assert observe(self.state, model, history, tau=1)[3] == 0.2

    def test_delay_out_of_range(self):
        model = ObservationModel.last_received(2)
        with pytest.raises(ContractViolationError):
            observe(self.state, model, ObservationHistory(samples=[0.0]), tau=3)

    def test_last_received_needs_history(self):
        with pytest.raises(ContractViolationError):
            observe(self.state, ObservationModel.last_received(2))


class TestScenarioSpecs:
    """Raw and augmented follower processes."""

    def test_case2_is_not_structurally_markov(self):
        spec = build_case2_spec(horizon=10)
        assert spec.exo_process.structurally_markov is False
        assert rollout(spec, lambda s: np.array([0.0]), seed=0).states.shape == (11, 3)

    def test_case4_carries_predecessor_acceleration(self):
        spec = build_case4_spec(horizon=10)
        assert spec.markov_declared is True
        traj = rollout(spec, lambda s: np.array([0.0]), seed=0)
        p = VehicleParams()
        for rec in traj.steps:
            expected = dynamics_step(rec.s[:3], 0.0, rec.s[3], p).as_array()
            np.testing.assert_allclose(rec.s_next[:3], expected)


class TestVehicleFollowingEnv:
    """Environment over a recorded predecessor trace."""

    def test_trace_shorter_than_horizon(self):
        with pytest.raises(ValidationError):
            VehicleFollowingEnv(PredecessorTrajectory(acc=np.zeros(5), T=0.1), horizon=10)

    def test_episode_log(self, tmp_path):
        env = VehicleFollowingEnv(synth_stop_and_go(40, seed=1), horizon=20)
        s = env.reset(seed=0)
        assert s.shape == (4,)
        done = False
        while not done:
            s, _, done, _ = env.step(0.0)
        frame = env.episode_frame()
        assert list(frame.columns) == EPISODE_COLUMNS
        assert len(frame) == 20
        assert frame["k"].tolist() == list(range(20))
        path = env.write_episode_log(str(tmp_path / "episode.csv"))
        assert open(path).readline().strip() == ",".join(EPISODE_COLUMNS)

    def test_snapshot_restore(self):
        env = VehicleFollowingEnv(synth_stop_and_go(40, seed=2), horizon=30)
        env.reset(seed=4)
        for _ in range(5):
            env.step(1.0)
        snap = env.snapshot()
        first = [env.step(-0.5)[1] for _ in range(5)]
        env.restore(snap)
        second = [env.step(-0.5)[1] for _ in range(5)]
        assert first == second

    def test_delay_schedule_limits(self):
        env = VehicleFollowingEnv(synth_stop_and_go(40), horizon=10, tau_max=2, delays=[1, 3])
        with pytest.raises(ContractViolationError):
            env.reset(seed=0)
            env.step(0.0)

    def test_sampled_delays_are_capped_and_counted(self):
        env = VehicleFollowingEnv(synth_stop_and_go(40), horizon=10, tau_max=3,
                                  delay_sampler=lambda rng: 3)
        env.reset(seed=0)
        assert env.tau == 2
        for _ in range(3):
            env.step(0.0)
        assert env.tau == 3
        assert env.capped_delays == 1

    def test_last_received_observation_from_env(self):
        trace = PredecessorTrajectory(acc=np.arange(20, dtype=float) / 10.0, T=0.1)
        env = VehicleFollowingEnv(trace, horizon=10, tau_max=2, delays=[1, 1, 2, 2, 2])
        env.reset(seed=0, state=[0.0, 0.0, 0.0])
        env.step(0.0)
        env.step(0.0)
        obs = env.observation(ObservationModel.last_received(2))
        assert env.tau == 2
        assert obs[3] == pytest.approx(0.0)
        assert obs[-1] == 2.0
