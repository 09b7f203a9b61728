"""
Sensor CSV parsing and harmonic feature extraction.
"""

import math

import numpy as np
import pytest

from tidecal_core.errors import BadHeader, BadUnit, NonMonotonicTime, NoOverlap, TooShort, UnparsableRow
from tidecal_core.sensor_signal import (
    HarmonicFeature, extract_extrema, extract_features, find_gaps, format_sensor_csv, noise_estimate,
    parse_sensor_csv, read_sensor_csv, resample_linear, smooth_adaptive, wrap_delay, write_sensor_csv,
)
from tidecal_core.units import TimeSeries, Unit


def harmonic(period, amplitude, lag_s=0.0, periods=4, dt=300.0, unit=Unit.MBAR, mean=0.0):
    t = np.arange(0.0, periods * period + dt / 2, dt)
    v = mean + amplitude * np.sin(2 * math.pi * (t - lag_s) / period)
    return TimeSeries(t, v, unit)


class TestCsvParsing:
    """Strict `time,value,unit` files."""

    def test_single_row(self):
        s = parse_sensor_csv("time,value,unit\n2010-01-09T05:00:00Z,253,mbar")
        assert len(s) == 1
        assert s.unit is Unit.MBAR
        assert s.values[0] == 253.0

    def test_bytes_input(self):
        s = parse_sensor_csv(b"time,value,unit\n2010-01-09T05:00:00Z,1.5,cm\n")
        assert s.unit is Unit.CM_WATER

    def test_invalid_utf8_row_reports_line(self):
        with pytest.raises(UnparsableRow) as e:
            parse_sensor_csv(b"time,value,unit\n2010-01-09T05:00:00Z,1,mbar\n2010-01-09T05:10:00Z,\xff,mbar\n")
        assert e.value.line == 3

    def test_invalid_utf8_header(self):
        with pytest.raises(BadHeader):
            parse_sensor_csv(b"time,val\xe9,unit\n2010-01-09T05:00:00Z,1,mbar\n")

    def test_bad_header(self):
        with pytest.raises(BadHeader):
            parse_sensor_csv("t,v,u\n2010-01-09T05:00:00Z,1,mbar\n")

    def test_unknown_unit(self):
        with pytest.raises(BadUnit):
            parse_sensor_csv("time,value,unit\n2010-01-09T05:00:00Z,1,psi\n")

    def test_mixed_units(self):
        with pytest.raises(BadUnit):
            parse_sensor_csv("time,value,unit\n2010-01-09T05:00:00Z,1,mbar\n2010-01-09T05:10:00Z,1,cm\n")

    def test_unparsable_row_reports_line(self):
        text = "time,value,unit\n2010-01-09T05:00:00Z,1,mbar\n2010-01-09T05:10:00Z,abc,mbar\n"
        with pytest.raises(UnparsableRow) as err:
            parse_sensor_csv(text)
        assert err.value.line == 3

    def test_wrong_field_count(self):
        with pytest.raises(UnparsableRow):
            parse_sensor_csv("time,value,unit\n2010-01-09T05:00:00Z,1\n")

    def test_crlf_is_refused(self):
        with pytest.raises(UnparsableRow):
            parse_sensor_csv("time,value,unit\n2010-01-09T05:00:00Z,1,mbar\r\n")

    def test_repeated_timestamp(self):
        text = "time,value,unit\n2010-01-09T05:00:00Z,1,mbar\n2010-01-09T05:00:00Z,2,mbar\n"
        with pytest.raises(NonMonotonicTime):
            parse_sensor_csv(text)

    def test_header_only(self):
        with pytest.raises(TooShort):
            parse_sensor_csv("time,value,unit\n")

    def test_write_read_round_trip(self, tmp_path):
        s = TimeSeries([1262995200.0, 1262995800.0], [253.125, -12.5], Unit.MBAR)
        path = tmp_path / "E4.csv"
        write_sensor_csv(path, s)
        back = read_sensor_csv(path)
        assert back.timestamps == pytest.approx(s.timestamps)
        assert back.values == pytest.approx(s.values)
        assert path.read_text().startswith("time,value,unit\n2010-01-09T00:00:00Z,")

    def test_dimensionless_series_cannot_be_written(self):
        with pytest.raises(BadUnit):
            format_sensor_csv(TimeSeries([0.0], [1.0], Unit.DIMENSIONLESS))


class TestResampling:
    def test_uniform_grid(self):
        s = TimeSeries([0.0, 10.0, 30.0], [0.0, 1.0, 3.0])
        r = resample_linear(s, 5.0)
        assert list(r.timestamps) == [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]
        assert r.values[3] == pytest.approx(1.5)

    def test_gaps(self):
        s = TimeSeries([0.0, 10.0, 100.0, 110.0], [0.0] * 4)
        assert find_gaps(s, 50.0) == [(10.0, 100.0)]


class TestSmoothing:
    """Adaptive local linear regression."""

    def test_straight_line_is_preserved(self, period):
        t = np.arange(0.0, 200 * 60.0, 60.0)
        s = TimeSeries(t, 0.01 * t + 3.0)
        out = smooth_adaptive(s, noise_scale=0.0, period=period)
        assert out.values == pytest.approx(s.values, abs=1e-8)

    def test_reduces_noise(self, period):
        rng = np.random.default_rng(3)
        clean = harmonic(period, 20.0, periods=2, dt=300.0)
        noisy = clean.with_values(clean.values + rng.normal(0.0, 2.0, len(clean)))
        out = smooth_adaptive(noisy, period=period)
        err_before = np.std(noisy.values - clean.values)
        err_after = np.std(out.values - clean.values)
        assert err_after < err_before

    def test_smoothing_twice_changes_little(self, period):
        rng = np.random.default_rng(4)
        clean = harmonic(period, 20.0, periods=2, dt=300.0)
        noisy = clean.with_values(clean.values + rng.normal(0.0, 1.0, len(clean)))
        once = smooth_adaptive(noisy, period=period)
        twice = smooth_adaptive(once, noise_scale=noise_estimate(noisy.values), period=period)
        assert np.max(np.abs(twice.values - once.values)) < 2.0

    def test_too_few_samples(self, period):
        with pytest.raises(TooShort):
            smooth_adaptive(TimeSeries(np.arange(5.0), np.zeros(5)), period=period)


class TestExtrema:
    def test_one_pair_per_cycle(self, period):
        cycles = extract_extrema(harmonic(period, 1.0, periods=4), period)
        assert len(cycles) in (3, 4)
        for tmax, vmax, tmin, vmin in cycles:
            assert tmin > tmax
            assert vmax == pytest.approx(1.0, abs=1e-3)
            assert vmin == pytest.approx(-1.0, abs=1e-3)

    def test_linear_trend_moves_extrema_to_true_position(self, period):
        amplitude, slope = 20.0, 2.0 / period
        omega = 2 * math.pi / period
        series = harmonic(period, amplitude, periods=4, dt=120.0)
        series = series.with_values(series.values + slope * series.timestamps)
        cycles = extract_extrema(series, period)
        assert len(cycles) == 4
        phase = math.acos(-slope / (amplitude * omega))

        def exact(t):
            return amplitude * math.sin(omega * t) + slope * t

        for k, (tmax, vmax, tmin, vmin) in enumerate(cycles):
            want_max = (phase + 2 * math.pi * k) / omega
            want_min = (2 * math.pi * (k + 1) - phase) / omega
            assert tmax == pytest.approx(want_max, abs=30.0)
            assert tmin == pytest.approx(want_min, abs=30.0)
            assert vmax == pytest.approx(exact(want_max), rel=1e-3)
            assert vmin == pytest.approx(exact(want_min), rel=1e-3)

    def test_constant_series_has_no_cycles(self, period):
        s = TimeSeries(np.arange(0.0, 2 * period, 600.0), np.full(len(np.arange(0.0, 2 * period, 600.0)), 5.0))
        assert extract_extrema(s, period) == []

    def test_shorter_than_a_period(self, period):
        with pytest.raises(TooShort):
            extract_extrema(harmonic(period, 1.0, periods=0.5), period)


class TestFeatures:
    """Relative amplitude and lag against the tide."""

    def test_table_example(self, fluid, period):
        # 258 cm peak-to-trough tide, 53.2 mbar peak-to-trough pressure lagging 18 min
        tide = harmonic(period, 129.0, periods=4, dt=120.0, unit=Unit.CM_WATER)
        pressure = harmonic(period, 26.6, lag_s=18 * 60.0, periods=4, dt=120.0, unit=Unit.MBAR)
        feat = extract_features(pressure, tide, fluid, period)
        assert feat.relative_amplitude == pytest.approx(0.21, abs=0.005)
        assert feat.delay_minutes == pytest.approx(18.0, abs=0.5)
        assert feat.per_cycle

    def test_air_pressure_is_subtracted(self, fluid, period):
        tide = harmonic(period, 100.0, periods=3, dt=300.0, unit=Unit.CM_WATER)
        pressure = harmonic(period, 20.0, lag_s=600.0, periods=3, dt=300.0, mean=1013.0)
        air = TimeSeries(pressure.timestamps, np.full(len(pressure), 1013.0), Unit.MBAR)
        with_air = extract_features(pressure, tide, fluid, period, air=air)
        plain = extract_features(pressure.with_values(pressure.values - 1013.0), tide, fluid, period)
        assert with_air.relative_amplitude == pytest.approx(plain.relative_amplitude)
        assert with_air.delay_s == pytest.approx(plain.delay_s)

    def test_delay_wraps_into_period(self, fluid, period):
        tide = harmonic(period, 100.0, periods=4, dt=300.0, unit=Unit.CM_WATER)
        pressure = harmonic(period, 20.0, lag_s=-1800.0, periods=4, dt=300.0)
        feat = extract_features(pressure, tide, fluid, period)
        assert 0.0 <= feat.delay_s < period
        assert feat.delay_s == pytest.approx(period - 1800.0, abs=60.0)

    def test_no_overlap(self, fluid, period):
        tide = harmonic(period, 100.0, periods=2, unit=Unit.CM_WATER)
        pressure = harmonic(period, 20.0, periods=2).shifted(10 * period)
        with pytest.raises(NoOverlap):
            extract_features(pressure, tide, fluid, period)

    def test_flat_pressure_has_no_cycles(self, fluid, period):
        tide = harmonic(period, 100.0, periods=2, unit=Unit.CM_WATER)
        flat = TimeSeries(tide.timestamps, np.zeros(len(tide)), Unit.MBAR)
        with pytest.raises(TooShort):
            extract_features(flat, tide, fluid, period)

    def test_smoothed_extraction_on_noisy_record(self, fluid, period):
        rng = np.random.default_rng(11)
        tide = harmonic(period, 129.0, periods=4, dt=300.0, unit=Unit.CM_WATER)
        pressure = harmonic(period, 26.6, lag_s=18 * 60.0, periods=4, dt=300.0)
        noisy = pressure.with_values(pressure.values + rng.normal(0.0, 0.5, len(pressure)))
        feat = extract_features(noisy, tide, fluid, period, smooth=True)
        assert feat.relative_amplitude == pytest.approx(0.21, abs=0.02)
        assert feat.delay_minutes == pytest.approx(18.0, abs=5.0)

    def test_scaling_pressure_scales_amplitude_only(self, fluid, period):
        tide = harmonic(period, 129.0, periods=4, dt=120.0, unit=Unit.CM_WATER)
        pressure = harmonic(period, 26.6, lag_s=18 * 60.0, periods=4, dt=120.0)
        base = extract_features(pressure, tide, fluid, period)
        scaled = extract_features(pressure.scaled(3.0), tide, fluid, period)
        assert scaled.relative_amplitude == pytest.approx(3.0 * base.relative_amplitude, rel=1e-9)
        assert scaled.delay_s == pytest.approx(base.delay_s, abs=1e-6)

    def test_shifting_both_series_changes_nothing(self, fluid, period):
        tide = harmonic(period, 129.0, periods=4, dt=120.0, unit=Unit.CM_WATER)
        pressure = harmonic(period, 26.6, lag_s=18 * 60.0, periods=4, dt=120.0)
        base = extract_features(pressure, tide, fluid, period)
        moved = extract_features(pressure.shifted(5432.1), tide.shifted(5432.1), fluid, period)
        assert moved.relative_amplitude == pytest.approx(base.relative_amplitude, rel=1e-9)
        assert moved.delay_s == pytest.approx(base.delay_s, abs=1e-6)


class TestHarmonicFeature:
    def test_negative_delay_refused(self):
        with pytest.raises(ValueError):
            HarmonicFeature(0.5, -1.0)

    def test_wrap_delay(self):
        assert wrap_delay(-10.0, 100.0) == pytest.approx(90.0)
        assert wrap_delay(250.0, 100.0) == pytest.approx(50.0)

    def test_to_dict_minutes(self):
        assert HarmonicFeature(0.21, 1080.0).to_dict()["delay_minutes"] == pytest.approx(18.0)
