"""
Diffusivity sweeps: profile shapes, spread and plotting.
"""

import numpy as np
import pandas as pd
import pytest

from tidecal_core.errors import InvalidParameter
from tidecal_core.sensitivity import (
    amplitude_spread, analytic_profile_sweep, is_strictly_decreasing, log_spaced, numerical_profile_sweep,
    plot_sweep, probe_sweep, slice_probes,
)


class TestAnalyticSweep:
    DS = [0.01, 0.1, 1.0, 10.0]

    def test_long_form_frame(self):
        frame = analytic_profile_sweep(self.DS, np.arange(0.0, 100.0, 10.0), 120.0)
        assert list(frame.columns) == ["d", "x", "amplitude", "delay_min"]
        assert len(frame) == len(self.DS) * 10

    def test_amplitude_falls_away_from_the_sea(self):
        frame = analytic_profile_sweep(self.DS, np.arange(0.0, 100.0, 10.0), 120.0)
        for _, grp in frame.groupby("d"):
            assert grp["amplitude"].iloc[0] == pytest.approx(1.0)
            assert is_strictly_decreasing(grp["amplitude"])

    def test_larger_d_reaches_further(self):
        frame = analytic_profile_sweep([0.01, 0.1, 1.0], [50.0], 1000.0)
        assert np.all(np.diff(frame.sort_values("d")["amplitude"].to_numpy()) > 0)

    def test_rejects_non_positive_d(self):
        with pytest.raises(InvalidParameter):
            analytic_profile_sweep([1.0, 0.0], [10.0], 120.0)
        with pytest.raises(InvalidParameter):
            analytic_profile_sweep([], [10.0], 120.0)


class TestHelpers:
    def test_log_spaced(self):
        assert log_spaced(0.01, 1.0, 3) == pytest.approx([0.01, 0.1, 1.0])

    @pytest.mark.parametrize("args", [(0.0, 1.0, 3), (1.0, 0.1, 3), (0.1, 1.0, 1)])
    def test_log_spaced_invalid(self, args):
        with pytest.raises(InvalidParameter):
            log_spaced(*args)

    def test_spread_of_identical_profiles_is_zero(self):
        frame = pd.DataFrame({"d": [1, 1, 2, 2], "x": [0, 5, 0, 5], "amplitude": [1.0, 0.5, 1.0, 0.5]})
        assert amplitude_spread(frame) == 0.0

    def test_spread(self):
        frame = pd.DataFrame({"d": [1, 2], "x": [0, 0], "amplitude": [0.9, 1.1]})
        assert amplitude_spread(frame) == pytest.approx(0.1)

    def test_strictly_decreasing(self):
        assert is_strictly_decreasing([3, 2, 1])
        assert not is_strictly_decreasing([3, 3, 1])

    def test_slice_points_keeps_inside_points(self, coarse_section):
        probes = slice_probes(coarse_section, -5.5, [-40.0, 0.0, 50.0, 100.0])
        assert [p.id for p in probes] == ["S0", "S50"]
        assert all(p.y == -5.5 for p in probes)

    def test_plot_sweep_writes_png(self, tmp_path):
        frame = analytic_profile_sweep([0.1, 1.0], np.arange(0.0, 60.0, 10.0), 80.0)
        path = plot_sweep(frame, tmp_path / "sweep.png", title="strip")
        assert (tmp_path / "sweep.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        assert path == tmp_path / "sweep.png"


class TestNumericalSweep:
    def test_no_sample_point_inside(self, small_strip, tide_factory):
        with pytest.raises(InvalidParameter):
            numerical_profile_sweep(small_strip, [1.0], -3.0, [-10.0, 200.0], tide_factory(periods=4))

    @pytest.mark.slow
    def test_strip_profiles(self, small_strip, tide_factory):
        tide = tide_factory(periods=4, dt=600.0)
        frame = numerical_profile_sweep(small_strip, [0.1, 1.0, 10.0], -3.0, [20.0, 35.0, 50.0], tide,
                                        dt=600.0, spinup_periods=3)
        assert len(frame) == 9
        for _, grp in frame.groupby("d"):
            # sea at x = 60: amplitude grows towards it
            assert np.all(np.diff(grp.sort_values("x")["amplitude"].to_numpy()) > 0)

    @pytest.mark.slow
    def test_numerical_sweep(self, small_strip, tide_factory):
        tide = tide_factory(periods=4, dt=600.0)
        frame = probe_sweep(small_strip, [0.1, 10.0], 40.0, -3.0, tide, dt=600.0, spinup_periods=3)
        assert list(frame.columns) == ["d", "amplitude", "delay_min"]
        assert frame["delay_min"].iloc[1] < frame["delay_min"].iloc[0]
