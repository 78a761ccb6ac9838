"""Tests for the experiment presets and plot-data emission."""

import numpy as np
import pandas as pd
import pytest

from cav.voi.exceptions import ValidationError
from cav.voi.scenarios import (
    FIGURES,
    PLOT_COLUMNS,
    SCENARIOS,
    case11_comm,
    custom,
    emit_plotdata,
    predecessor_traces,
    tabular_properties,
)


class TestPredecessorTraces:
    """Trace selection for the comm scenarios."""

    def test_seeded_traces_cover_horizon(self, small_config):
        config = small_config("case11_comm")
        traces = predecessor_traces(config, 2)
        assert len(traces) == 2
        assert all(len(t) >= config.horizon for t in traces)
        assert not np.array_equal(traces[0].acc, traces[1].acc)

    def test_file_trace_too_short(self, small_config, tmp_path):
        path = tmp_path / "short.csv"
        frame = pd.DataFrame({"time_s": [0.0, 0.1, 0.2], "velocity_mps": [10.0, 10.0, 10.0]})
        frame.to_csv(path, index=False)
        config = small_config("custom", f"trajectory_path={path}")
        with pytest.raises(ValidationError):
            predecessor_traces(config, 1)


class TestTabularProperties:
    """Exact property suites."""

    def test_all_suites_pass(self, small_config):
        output = tabular_properties(small_config())
        assert output.passed, output.summary["suites"]
        assert set(output.summary["suites"]) == {
            "augmentation_not_worse", "occupancy_identity", "itvoi_constructions",
            "estimator_consistency", "queue_delay_conformance", "free_decay", "gradient_check",
        }
        frame = output.frames["tabular_properties.csv"]
        assert list(frame.columns) == ["suite", "instance", "value", "passed"]

    def test_estimator_consistency_summary(self, small_config):
        suite = tabular_properties(small_config()).summary["suites"]["estimator_consistency"]
        assert suite["passed"]
        assert suite["method_b_max_error"] <= 1e-8
        assert suite["method_c_max_error"] <= 1e-8
        assert suite["method_a_labels"] == 20
        assert suite["method_a_within_2se"] >= 0.8

    def test_progress_reported_in_order(self, small_config):
        seen = []
        tabular_properties(small_config(), lambda percent, stage: seen.append(percent))
        assert seen == sorted(seen)


class TestCommScenarios:
    """Closed-loop comm presets on a tiny grid."""

    def test_case11_summary(self, small_config):
        output = case11_comm(small_config("case11_comm"))
        assert set(output.summary["policies"]) == {"gated", "always"}
        assert output.summary["reward_identity_max_error"] <= 1e-12
        assert len(output.frames["comm_runs.csv"]) == 4
        assert "comm_gated_intervals.csv" in output.frames
        assert output.plot_figure == "fig5_style"

    def test_custom_ranks_candidates(self, small_config):
        output = custom(small_config("custom", "comm.candidates=[always,never]"))
        assert sorted(output.summary["ranking"]) == ["always", "never"]
        table = output.frames["decision_ranking.csv"]
        assert list(table["rank"]) == [1, 2]
        assert table["jcm"].is_monotonic_decreasing

    def test_registry(self):
        assert set(SCENARIOS) == {"tabular_properties", "case8_voi", "case11_comm", "custom"}


class TestPlotData:
    """Tidy plot bundles."""

    @pytest.mark.parametrize("figure", FIGURES)
    def test_empty_run_directory(self, tmp_path, figure):
        path = emit_plotdata(str(tmp_path), figure)
        frame = pd.read_csv(path)
        assert list(frame.columns) == PLOT_COLUMNS
        assert frame.empty

    def test_unknown_figure(self, tmp_path):
        with pytest.raises(ValidationError):
            emit_plotdata(str(tmp_path), "fig6_style")

    def test_fig4_from_episode_logs(self, tmp_path):
        episode = pd.DataFrame({"k": [0, 1], "e_p": [0.1, 0.2], "e_v": [0.0, 0.1],
                                "acc": [0.0, 0.5], "acc_pred": [1.0, 1.0]})
        episode.to_csv(tmp_path / "episode_sup.csv", index=False)
        pd.DataFrame({"k": [0, 1], "ivomi": [-0.5, 0.0]}).to_csv(tmp_path / "ivomi_trace.csv",
                                                                  index=False)
        frame = pd.read_csv(emit_plotdata(str(tmp_path), "fig4_style"))
        assert len(frame) == 2 * 4 + 2
        assert set(frame["series"]) == {"acc_pred", "e_p", "e_v", "acc_follower", "ivoi"}
        assert set(frame["policy"]) == {"sup", "inf"}
