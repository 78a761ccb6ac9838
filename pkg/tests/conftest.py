"""Shared fixtures for the cav-voi test suite."""

import numpy as np
import pytest

from cav.voi.config import build_config
from cav.voi.ssdp import ExoProcess, SsdpSpec


@pytest.fixture
def line_spec() -> SsdpSpec:
    """Random walk on the line, s' = s + a + w with w uniform on {-1, +1}."""
    return SsdpSpec(
        state_dim=1,
        action_dim=1,
        transition=lambda s, a, w: s + a + w,
        reward=lambda s, a, w: -abs(float(s[0])),
        exo_process=ExoProcess.iid([-1.0, 1.0]),
        gamma=0.9,
        horizon=20,
        action_low=np.array([-1.0]),
        action_high=np.array([1.0]),
        name="line",
    )


@pytest.fixture
def small_config(tmp_path):
    """Factory for a fast experiment configuration writing under tmp_path."""

    def make(scenario: str = "tabular_properties", *overrides: str):
        base = [
            f"out_dir={tmp_path / scenario}",
            "tabular.n_instances=2",
            "tabular.max_states=6",
            "tabular.identity_states=6",
            "method_a.rollout_set_size=20",
            "method_a.rollouts_per_state=50",
            "method_a.horizon=60",
            "method_a.collection_episodes=1",
            "horizon=30",
            "episodes=2",
            "comm.runs=2",
            "grid.e_p=[-1.0,0.0,1.0]",
            "grid.e_v=[-1.0,0.0,1.0]",
            "grid.acc=[-1.0,0.0,1.0]",
            "grid.u=[-1.0,0.0,1.0]",
            "grid.acc_pred=[-1.0,0.0,1.0]",
        ]
        return build_config(None, scenario=scenario, overrides=base + list(overrides))

    return make


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)
