"""
Synthetic tide and sensor files.
"""

import json
import math

import numpy as np
import pytest

from tidecal_core.errors import InvalidParameter
from tidecal_core.flow_solver import simulate
from tidecal_core.sensor_signal import CSV_HEADER, extract_features, read_sensor_csv
from tidecal_core.synthetic_sensors import generate_synthetic_sensors, synthetic_tide
from tidecal_core.units import Unit


class TestSyntheticTide:
    def test_defaults_cover_ten_periods(self, period):
        tide = synthetic_tide()
        assert tide.unit is Unit.CM_WATER
        assert tide.t_start == 0.0
        assert tide.t_end == pytest.approx(10 * period)
        assert len(tide) == 746
        assert tide.meta["source"] == "synthetic"

    def test_harmonic_values(self, period):
        tide = synthetic_tide(80.0, period, 0.0, period, period / 4, mean_cm=10.0)
        assert tide.values == pytest.approx([10.0, 90.0, 10.0, -70.0, 10.0], abs=1e-9)

    def test_slow_constituent_adds(self, period):
        fast = synthetic_tide(100.0, period, 0.0, 2 * 86400.0, 600.0)
        both = synthetic_tide(100.0, period, 0.0, 2 * 86400.0, 600.0, slow_amplitude_cm=30.0)
        slow = both.values - fast.values
        assert np.max(slow) == pytest.approx(30.0, rel=1e-3)

    @pytest.mark.parametrize("kwargs", [
        {"amplitude_cm": -1.0},
        {"dt": 0.0},
        {"t0": 100.0, "t1": 50.0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidParameter):
            synthetic_tide(**kwargs)


class TestGenerateSensors:
    """Forward run plus noise, written as sensor CSV files."""

    def test_files_and_truth(self, tmp_path, small_strip, tide_factory):
        tide = tide_factory(periods=2, dt=600.0)
        paths = generate_synthetic_sensors(small_strip, tide, tmp_path, dt=600.0)
        assert set(paths) == {"P20"}
        assert (tmp_path / "P20.csv").read_text().startswith(CSV_HEADER + "\n")
        assert read_sensor_csv(tmp_path / "P20.csv").unit is Unit.MBAR
        assert read_sensor_csv(tmp_path / "tide.csv").unit is Unit.CM_WATER
        truth = json.loads((tmp_path / "truth.json").read_text())
        assert truth["zones"][0]["d_mu_Pa_m2"] == pytest.approx(small_strip.zones[0].d_mu)
        assert truth["noise_mbar"] == 0.0

    def test_fixed_seed_is_byte_identical(self, tmp_path, small_strip, tide_factory):
        tide = tide_factory(periods=1, dt=600.0)
        a, b = tmp_path / "a", tmp_path / "b"
        generate_synthetic_sensors(small_strip, tide, a, noise_mbar=0.5, seed=7, dt=600.0)
        generate_synthetic_sensors(small_strip, tide, b, noise_mbar=0.5, seed=7, dt=600.0)
        assert (a / "P20.csv").read_bytes() == (b / "P20.csv").read_bytes()
        assert (a / "truth.json").read_bytes() == (b / "truth.json").read_bytes()

    def test_noise_level(self, tmp_path, small_strip, tide_factory):
        tide = tide_factory(periods=2, dt=600.0)
        generate_synthetic_sensors(small_strip, tide, tmp_path / "clean", dt=600.0)
        generate_synthetic_sensors(small_strip, tide, tmp_path / "noisy", noise_mbar=2.0, seed=1, dt=600.0)
        clean = read_sensor_csv(tmp_path / "clean" / "P20.csv").values
        noisy = read_sensor_csv(tmp_path / "noisy" / "P20.csv").values
        assert np.std(noisy - clean) == pytest.approx(2.0, rel=0.2)

    def test_resampled_output(self, tmp_path, small_strip, tide_factory, period):
        tide = tide_factory(periods=1, dt=600.0)
        generate_synthetic_sensors(small_strip, tide, tmp_path, dt=600.0, sample_dt=1200.0)
        series = read_sensor_csv(tmp_path / "P20.csv")
        assert len(series) == math.floor(period / 1200.0) + 1
        assert series.median_dt == 1200.0

    def test_noiseless_files_reproduce_features(self, tmp_path, small_strip, tide_factory, fluid):
        tide = tide_factory(periods=3, dt=600.0)
        generate_synthetic_sensors(small_strip, tide, tmp_path, dt=600.0)
        direct = simulate(small_strip, tide, dt=600.0).probes["P20"]
        expected = extract_features(direct, tide, fluid)
        got = extract_features(read_sensor_csv(tmp_path / "P20.csv"), read_sensor_csv(tmp_path / "tide.csv"), fluid)
        assert got.relative_amplitude == pytest.approx(expected.relative_amplitude, rel=1e-6)
        assert got.delay_s == pytest.approx(expected.delay_s, abs=1.0)

    def test_negative_noise(self, tmp_path, small_strip, tide_factory):
        with pytest.raises(InvalidParameter):
            generate_synthetic_sensors(small_strip, tide_factory(periods=1), tmp_path, noise_mbar=-1.0)
