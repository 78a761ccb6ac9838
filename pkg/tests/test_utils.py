"""Tests for seeding, statistics and CSV helpers."""

import numpy as np
import pandas as pd

from cav.voi.utils import derive_seeds, mean_ci, write_frame


class TestWriteFrame:
    """CSV output of result tables."""

    def test_floats_round_trip_exactly(self, tmp_path):
        values = [0.1, 1.0 / 3.0, -2.5e-17]
        path = write_frame(pd.DataFrame({"x": values}), str(tmp_path / "sub" / "t.csv"))
        with open(path, "rb") as f:
            raw = f.read()
        assert b"\r\n" not in raw
        assert raw.decode().splitlines() == ["x", "0.1", "0.3333333333333333", "-2.5e-17"]
        assert pd.read_csv(path, float_precision="round_trip")["x"].tolist() == values

    def test_output_is_byte_stable(self, tmp_path):
        frame = pd.DataFrame({"k": [0, 1], "value": [np.pi, np.e]})
        first = write_frame(frame, str(tmp_path / "a.csv"))
        second = write_frame(frame, str(tmp_path / "b.csv"))
        with open(first, "rb") as a, open(second, "rb") as b:
            assert a.read() == b.read()


class TestSeedsAndIntervals:
    """Seed derivation and confidence intervals."""

    def test_derived_seeds_are_reproducible(self):
        assert derive_seeds(7, 4) == derive_seeds(7, 4)
        assert len(set(derive_seeds(7, 4))) == 4

    def test_mean_ci_brackets_the_mean(self):
        mean, se, (low, high) = mean_ci([1.0, 2.0, 3.0, 4.0])
        assert mean == 2.5
        np.testing.assert_allclose(se, np.std([1.0, 2.0, 3.0, 4.0], ddof=1) / 2.0)
        assert low < mean < high
