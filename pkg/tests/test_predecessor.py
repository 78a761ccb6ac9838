"""Tests for predecessor trajectory synthesis, ingestion and input recovery."""

import numpy as np
import pandas as pd
import pytest

from cav.voi.data.enums import TrajectorySource
from cav.voi.data.params import StopAndGoConfig, VehicleParams
from cav.voi.exceptions import ConfigError, ValidationError
from cav.voi.predecessor import load_trajectory, recover_inputs, synth_stop_and_go
from cav.voi.vehicle import predecessor_acc_step


def write_trace(path, time, velocity, names=("time_s", "velocity_mps")):
    pd.DataFrame({names[0]: time, names[1]: velocity}).to_csv(path, index=False)
    return str(path)


class TestStopAndGo:
    """Synthetic stop-and-go profiles."""

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_velocity_never_negative(self, seed):
        trace = synth_stop_and_go(2000, seed=seed)
        assert len(trace) == 2000
        assert trace.source == TrajectorySource.SYNTHETIC
        assert trace.velocity().min() >= -1e-9

    def test_reproducible(self):
        np.testing.assert_array_equal(synth_stop_and_go(300, seed=7).acc,
                                      synth_stop_and_go(300, seed=7).acc)

    def test_inverted_range_rejected(self):
        with pytest.raises(ConfigError):
            synth_stop_and_go(10, StopAndGoConfig(accel_magnitude=(2.0, 1.0)))

    def test_replay_as_exogenous_process(self):
        trace = synth_stop_and_go(5, seed=0)
        stream = trace.as_exo_process().stream(0)
        replay = [float(stream.draw()[0]) for _ in range(5)]
        np.testing.assert_array_equal(replay, trace.acc)

    def test_frame_columns(self, tmp_path):
        trace = synth_stop_and_go(10, seed=0)
        frame = pd.read_csv(trace.to_csv(str(tmp_path / "trace.csv")))
        assert list(frame.columns) == ["k", "acc_pred", "v_pred"]


class TestLoadTrajectory:
    """CSV velocity traces converted to accelerations."""

    def test_constant_acceleration(self, tmp_path):
        t = np.linspace(0.0, 1.0, 11)
        path = write_trace(tmp_path / "v.csv", t, 10.0 + 2.0 * t)
        trace = load_trajectory(path)
        assert trace.source == TrajectorySource.FILE
        assert len(trace) == 10
        np.testing.assert_allclose(trace.acc, 2.0, atol=1e-9)
        assert trace.v0 == pytest.approx(10.0)
        assert trace.clip_count == 0

    def test_resamples_and_maps_columns(self, tmp_path):
        t_ms = np.array([0.0, 500.0, 1000.0])
        path = write_trace(tmp_path / "v.csv", t_ms, [0.0, 1.0, 2.0], names=("t", "v"))
        trace = load_trajectory(path, column_map={"time_s": "t", "velocity_mps": "v"},
                                time_scale=1e-3)
        assert len(trace) == 10
        np.testing.assert_allclose(trace.acc, 2.0, atol=1e-9)

    def test_accelerations_are_clipped(self, tmp_path):
        path = write_trace(tmp_path / "v.csv", [0.0, 0.1, 0.2], [0.0, 5.0, 5.0])
        trace = load_trajectory(path, acc_max=3.0)
        assert trace.clip_count == 1
        assert trace.acc.max() == 3.0

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(ValidationError):
            load_trajectory(str(path))

    def test_missing_column(self, tmp_path):
        path = write_trace(tmp_path / "v.csv", [0.0, 1.0], [1.0, 1.0], names=("time_s", "speed"))
        with pytest.raises(ValidationError, match="velocity_mps"):
            load_trajectory(path)

    def test_time_not_increasing(self, tmp_path):
        path = write_trace(tmp_path / "v.csv", [0.0, 0.2, 0.1], [1.0, 1.0, 1.0])
        with pytest.raises(ValidationError):
            load_trajectory(path)

    def test_too_short(self, tmp_path):
        path = write_trace(tmp_path / "v.csv", [0.0, 0.05], [1.0, 1.0])
        with pytest.raises(ValidationError):
            load_trajectory(path)


class TestRecoverInputs:
    """Inverting the predecessor driveline recurrence."""

    def test_inverse_of_recurrence(self, rng):
        p_pred = VehicleParams(rho=0.125, T=0.1)
        u = rng.uniform(-3.0, 3.0, size=50)
        acc = np.zeros(51)
        for k in range(50):
            acc[k + 1] = predecessor_acc_step(acc[k], u[k], p_pred)
        recovered = recover_inputs(acc, 0.1, 0.125)
        assert recovered.shape == acc.shape
        np.testing.assert_allclose(recovered[:-1], u, atol=1e-9)

    def test_empty(self):
        assert recover_inputs(np.array([]), 0.1, 0.125).size == 0
