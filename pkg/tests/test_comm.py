"""Tests for the C-V2X channel, queue, rewards, policies and closed-loop simulation."""

import numpy as np
import pandas as pd
import pytest

from cav.voi.comm import (
    CommHandles,
    ControlLoop,
    comm_reward_how,
    comm_reward_when,
    build_comm_ssdp,
    delay_step,
    discounted_slot_sum,
    objective_jcm,
    policy_always_transmit,
    policy_never_transmit,
    policy_voi_gated,
    queue_step,
    rates,
    sample_channel,
    simulate,
    sinr_v2i,
    sinr_v2v,
    static_decision_eval,
)
from cav.voi.data.comm import CamQueue, ChannelState, CommAction, SlotGains, SlotReward
from cav.voi.data.params import LinkGeometry, NetworkConfig
from cav.voi.exceptions import ContractViolationError, EstimatorUnavailableError, ValidationError
from cav.voi.metrics import QAdvantageCritic
from cav.voi.predecessor import synth_stop_and_go
from cav.voi.scenarios import queue_delay_oracle
from cav.voi.ssdp import rollout

HORIZON = 15


def hold(s):
    return np.array([0.0])


@pytest.fixture
def control():
    """One follower that holds zero input, scored by a magnitude critic."""
    critic = QAdvantageCritic(lambda s, a: -abs(float(np.ravel(a)[0])), pi_sup=hold)
    return ControlLoop(trajectories=[synth_stop_and_go(40, seed=3)], pi_sup=hold, critic=critic,
                       horizon=HORIZON)


class TestChannel:
    """Channel sampling and link SINRs."""

    def test_sample_shapes_and_seeding(self):
        config = NetworkConfig()
        cs = sample_channel(LinkGeometry(), config, seed=4, n_intervals=3)
        assert cs.n_slots == 3 * config.T_slots
        assert np.all(cs.alpha_v2i > 0)
        again = sample_channel(LinkGeometry(), config, seed=4, n_intervals=3)
        np.testing.assert_array_equal(cs.h_v2v, again.h_v2v)

    def test_no_fading_no_shadowing(self):
        config = NetworkConfig(fading=False, shadowing_std_db=0.0)
        cs = sample_channel(LinkGeometry(), config, seed=0, n_intervals=1)
        np.testing.assert_array_equal(cs.h_v2i, 1.0)
        expected = 10.0 ** (-(config.pl0_db + 10.0 * config.exponent_v2i * np.log10(200.0)) / 10)
        np.testing.assert_allclose(cs.alpha_v2i, [expected])

    def test_geometry_shape_checked(self):
        with pytest.raises(ContractViolationError):
            sample_channel(LinkGeometry(), NetworkConfig(L=2), seed=0)

    def test_rates_on_unit_gains(self):
        config = NetworkConfig()
        cs = ChannelState.fixed()
        action = CommAction.fixed(config)
        rv = rates(cs, action, [1], config)
        sinr = 0.2 / (config.sigma2 + 0.2)
        np.testing.assert_allclose(rv.sinr_v2i, [sinr])
        np.testing.assert_allclose(rv.sinr_v2v, [sinr])
        np.testing.assert_allclose(rv.v2i, [config.B * np.log2(1.0 + sinr)])
        np.testing.assert_allclose(rv.cam, rv.v2v / config.N_c)

    def test_silent_link_carries_nothing(self):
        config = NetworkConfig()
        cs = ChannelState.fixed()
        rv = rates(cs, CommAction.fixed(config), [0], config)
        assert rv.v2v[0] == 0.0
        np.testing.assert_allclose(rv.sinr_v2i, [0.2 / config.sigma2])
        assert sinr_v2i(cs, CommAction.fixed(config), [0], config, 0) == rv.sinr_v2i[0]

    def test_unassigned_subchannel(self):
        config = NetworkConfig(M=2)
        action = CommAction.fixed(config)
        with pytest.raises(ContractViolationError):
            sinr_v2v(ChannelState.fixed(M=2), action, [1], config, i=0, m=1)

    def test_feature_dimension(self):
        assert SlotGains.feature_dim(2, 2) == 2 + 12 + 4
        gains = ChannelState.fixed(M=2, L=2).slot(0)
        assert gains.to_features().size == SlotGains.feature_dim(2, 2)

    def test_action_from_vector_threshold(self):
        config = NetworkConfig()
        action = CommAction.from_vector(np.array([0.4, 0.2]), config)
        assert action.theta.sum() == 0.0
        assert action.P_V.sum() == 0.0


class TestQueueAndDelay:
    """CAM queue drain and observation delay."""

    def test_matches_case_by_case_oracle(self, rng):
        config = NetworkConfig()
        for _ in range(2000):
            cq = CamQueue(q=float(rng.uniform()), phi=int(rng.integers(2)),
                          tau=int(rng.integers(1, 6)))
            rate = float(rng.choice([0.0, rng.uniform(0.0, 200.0)]))
            t = int(rng.integers(0, config.T_slots + 1))
            phi_next = int(rng.integers(2))
            nxt = queue_step(cq, rate, config, t, phi_next if t == 0 else None)
            q_ref, tau_ref = queue_delay_oracle(cq.q, cq.phi, cq.tau, rate, config.dt, t,
                                                phi_next)
            assert nxt.q == q_ref
            assert delay_step(nxt) == tau_ref

    def test_slot_zero_needs_decision(self):
        with pytest.raises(ContractViolationError):
            queue_step(CamQueue(), 0.0, NetworkConfig(), 0)

    def test_slot_out_of_range(self):
        config = NetworkConfig()
        with pytest.raises(ContractViolationError):
            queue_step(CamQueue(), 0.0, config, config.T_slots + 1)

    def test_delivery_resets_delay(self):
        assert delay_step(CamQueue(q=0.0, phi=1, tau=4)) == 1
        assert delay_step(CamQueue(q=0.3, phi=1, tau=4)) == 5
        assert delay_step(CamQueue(q=0.0, phi=0, tau=4)) == 5

    def test_queue_bounds(self):
        with pytest.raises(ContractViolationError):
            CamQueue(q=1.5)


class TestRewards:
    """Slot and interval rewards and the joint objective."""

    def test_how_reward_adds_voi_in_last_slot(self):
        config = NetworkConfig()
        early = comm_reward_how([1e6], 0, [-2.0], config)
        last = comm_reward_how([1e6], config.T_slots - 1, [-2.0], config)
        assert early.voi == 0.0
        assert last.voi == -2.0
        np.testing.assert_allclose(early.throughput, 1.0)
        with pytest.raises(ContractViolationError):
            comm_reward_how([1e6], config.T_slots, [0.0], config)

    def test_when_reward_equals_slot_sum(self):
        config = NetworkConfig()
        v2i = np.linspace(1e5, 1e6, config.T_slots)
        slots = [comm_reward_how([v2i[t]], t, [-0.5], config) for t in range(config.T_slots)]
        np.testing.assert_allclose(comm_reward_when(v2i, [-0.5], config),
                                   discounted_slot_sum(slots, config.gamma_cm))

    def test_slot_sum_counts_voi_once(self):
        rewards = [SlotReward(1.0), SlotReward(1.0, voi=-3.0)]
        np.testing.assert_allclose(discounted_slot_sum(rewards, 0.5), 1.0 + 0.5 - 3.0)

    def test_objective_needs_evoi(self):
        log = pd.DataFrame({"k": [0], "t": [0], "rate_v2i_0": [1.0]})
        with pytest.raises(ValidationError):
            objective_jcm(log, NetworkConfig())
        config = NetworkConfig(kappa1=2.0, kappa2=3.0)
        assert objective_jcm(log, config, [-1.0]) == 2.0 - 3.0


class TestPolicies:
    """When-to-communicate decision rules."""

    def test_gate_on_signal(self):
        gated = policy_voi_gated(0.5, n_links=2)
        np.testing.assert_array_equal(gated(np.array([9.0, 0.2, -0.7])), [0.0, 1.0])
        np.testing.assert_array_equal(policy_always_transmit()(np.zeros(3)), [1.0])
        np.testing.assert_array_equal(policy_never_transmit()(np.array([1e9])), [0.0])

    def test_negative_gate(self):
        with pytest.raises(ContractViolationError):
            policy_voi_gated(-1.0)


class TestCommSsdp:
    """Communication decision processes."""

    def test_needs_ivoi_evaluator(self):
        with pytest.raises(EstimatorUnavailableError):
            build_comm_ssdp("when", CommHandles(LinkGeometry(), np.zeros(5)), None,
                            NetworkConfig())

    def test_when_process(self):
        config = NetworkConfig()
        spec = build_comm_ssdp("when", CommHandles(LinkGeometry(), np.zeros(5)),
                               lambda k, delivered: np.zeros(1), config)
        traj = rollout(spec, lambda s: np.ones(1), seed=0)
        assert len(traj) == 5
        assert spec.state_dim == SlotGains.feature_dim(1, 1) + 1
        assert np.all(traj.rewards > 0)

    def test_how_process(self):
        config = NetworkConfig()
        handles = CommHandles(LinkGeometry(), np.zeros(3), tau_max=2)
        spec = build_comm_ssdp("how", handles, lambda k, delivered: np.zeros(1), config)
        traj = rollout(spec, lambda s: np.array([1.0, config.P_V_max]), seed=1)
        assert len(traj) == 3 * config.T_slots
        assert spec.state_dim == SlotGains.feature_dim(1, 1) + 1 + 2 + 1
        np.testing.assert_array_equal(traj.states[:, -1][:config.T_slots],
                                      np.arange(config.T_slots))


class TestSimulate:
    """Closed-loop episodes of communication and control."""

    def test_objective_identity(self, control):
        config = NetworkConfig()
        run = simulate(policy_always_transmit(), control, config, LinkGeometry(), seed=2)
        expected = (config.kappa1 * run.discounted_throughput
                    + config.kappa2 * float(np.sum(run.evoi)))
        np.testing.assert_allclose(run.jcm, expected)
        assert len(run.slot_log) == HORIZON * config.T_slots
        assert len(run.interval_log) == HORIZON
        assert run.transmissions == HORIZON
        assert run.summary()["policy"] == "always"

    def test_never_transmit_grows_delay(self, control):
        config = NetworkConfig()
        run = simulate(policy_never_transmit(), control, config, LinkGeometry(), seed=2)
        assert run.transmissions == 0
        np.testing.assert_array_equal(run.interval_log["tau_next_0"], np.arange(2, HORIZON + 2))

    def test_gated_transmissions(self, control):
        gate = 1e-3
        run = simulate(policy_voi_gated(gate), control, NetworkConfig(), LinkGeometry(), seed=0)
        acc = control.trajectories[0].acc[:HORIZON]
        assert run.transmissions == int(np.sum(np.abs(acc) > gate))

    def test_silence_frees_the_uplink(self, control):
        config = NetworkConfig()
        always = simulate(policy_always_transmit(), control, config, LinkGeometry(), seed=5)
        never = simulate(policy_never_transmit(), control, config, LinkGeometry(), seed=5)
        assert never.discounted_throughput >= always.discounted_throughput

    def test_reproducible(self, control):
        config = NetworkConfig()
        first = simulate(policy_voi_gated(), control, config, LinkGeometry(), seed=9)
        second = simulate(policy_voi_gated(), control, config, LinkGeometry(), seed=9)
        pd.testing.assert_frame_equal(first.slot_log, second.slot_log)

    def test_slot_rewards_carry_voi_in_last_slot(self, control):
        config = NetworkConfig()
        run = simulate(policy_always_transmit(), control, config, LinkGeometry(), seed=1)
        slots = run.slot_rewards(0)
        assert len(slots) == config.T_slots
        assert all(r.voi == 0.0 for r in slots[:-1])

    def test_needs_critic(self, control):
        control.critic = None
        with pytest.raises(EstimatorUnavailableError):
            simulate(policy_always_transmit(), control, NetworkConfig(), LinkGeometry())

    def test_trace_count_must_match_links(self, control):
        config = NetworkConfig(L=2)
        geometry = LinkGeometry(d_v2v=(20.0, 30.0), d_v2v_to_bs=(200.0, 210.0),
                                d_v2i_to_v2v=((25.0,), (35.0,)),
                                d_v2v_cross=((1.0, 10.0), (10.0, 1.0)))
        with pytest.raises(ContractViolationError):
            simulate(policy_always_transmit(2), control, config, geometry)


class TestStaticDecisionEval:
    """Ranking fixed communication decisions."""

    def test_sorted_best_first(self, control):
        scores = static_decision_eval(["always", "never"], control, NetworkConfig(),
                                      LinkGeometry(), n_episodes=2, seed=0, workers=2)
        assert {s.name for s in scores} == {"always", "never"}
        assert scores[0].jcm >= scores[1].jcm
        assert all(s.n_episodes == 2 and len(s.per_episode) == 2 for s in scores)

    def test_unknown_candidate(self, control):
        with pytest.raises(ValidationError):
            static_decision_eval(["sometimes"], control, NetworkConfig(), LinkGeometry(), 1)

    def test_needs_episodes(self, control):
        with pytest.raises(ValidationError):
            static_decision_eval(["always"], control, NetworkConfig(), LinkGeometry(), 0)
