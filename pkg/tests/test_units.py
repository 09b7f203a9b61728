"""
Units, fluid properties and the TimeSeries container.
"""

import numpy as np
import pytest

from tidecal_core.errors import BadUnit, InvalidParameter, NonMonotonicTime
from tidecal_core.units import (
    FluidProperties, TimeSeries, Unit, convert, convert_level_to_pressure, viscosity_of_temperature,
    viscosity_seasonal_ratio, viscosity_series,
)


class TestConversions:
    """Level/pressure conversion at the default ρ = 1000 kg/m³, g = 9.81 m/s²."""

    def test_sea_level_drop_in_mbar(self, fluid):
        assert convert_level_to_pressure(258.0, fluid) == pytest.approx(253.0, abs=0.5)

    def test_convert_cm_to_mbar_matches_helper(self, fluid):
        assert convert(258.0, Unit.CM_WATER, Unit.MBAR, fluid) == pytest.approx(
            convert_level_to_pressure(258.0, fluid))

    def test_mbar_to_pa(self):
        assert convert(1.0, Unit.MBAR, Unit.PA) == pytest.approx(100.0)

    def test_same_unit_is_identity(self):
        assert convert(12.5, "cm", "cm") == 12.5

    def test_arrays_are_converted_elementwise(self, fluid):
        out = convert(np.array([0.0, 100.0]), Unit.CM_WATER, Unit.PA, fluid)
        assert out == pytest.approx([0.0, 9810.0])

    def test_dimensionless_has_no_pressure_equivalent(self):
        with pytest.raises(BadUnit):
            convert(1.0, Unit.DIMENSIONLESS, Unit.PA)

    def test_unit_parse_aliases(self):
        assert Unit.parse("mbar") is Unit.MBAR
        assert Unit.parse(" Pa ") is Unit.PA
        with pytest.raises(BadUnit):
            Unit.parse("psi")


class TestViscosity:
    """Step-function viscosity rule."""

    def test_reference_rows(self, fluid):
        assert viscosity_of_temperature(0.0, fluid) == pytest.approx(1.797e-3)
        assert viscosity_of_temperature(10.0, fluid) == pytest.approx(1.307e-3)
        assert viscosity_of_temperature(20.0, fluid) == pytest.approx(1.004e-3)

    def test_below_coldest_bound_uses_coldest_row(self, fluid):
        assert viscosity_of_temperature(-40.0, fluid) == pytest.approx(1.797e-3)

    def test_seasonal_ratio(self, fluid):
        assert viscosity_seasonal_ratio(fluid) == pytest.approx(1.79, abs=0.01)

    def test_non_increasing_in_temperature(self, fluid):
        temps = np.linspace(-5.0, 35.0, 81)
        mus = [viscosity_of_temperature(T, fluid) for T in temps]
        assert all(a >= b for a, b in zip(mus, mus[1:]))

    def test_rule_that_increases_with_temperature_is_refused(self):
        with pytest.raises(InvalidParameter):
            FluidProperties(viscosity_rule=((10.0, 2e-3), (float("-inf"), 1e-3)))

    def test_constant_rule(self):
        fl = FluidProperties.constant(1e-3)
        assert fl.viscosity == 1e-3
        assert fl.at_temperature(-10.0).viscosity == 1e-3

    def test_viscosity_series(self, fluid):
        temp = TimeSeries([0.0, 1.0, 2.0], [2.0, 12.0, 22.0], Unit.DIMENSIONLESS)
        mu = viscosity_series(temp, fluid)
        assert mu.values == pytest.approx([1.797e-3, 1.307e-3, 1.004e-3])

    def test_non_positive_density_refused(self):
        with pytest.raises(InvalidParameter):
            FluidProperties(rho=0.0)


class TestTimeSeries:
    """Immutable, strictly increasing sampled signals."""

    def test_non_monotonic_timestamps(self):
        with pytest.raises(NonMonotonicTime):
            TimeSeries([0.0, 10.0, 10.0], [1.0, 2.0, 3.0])

    def test_length_mismatch(self):
        with pytest.raises(InvalidParameter):
            TimeSeries([0.0, 1.0], [1.0])

    def test_arrays_are_read_only(self):
        s = TimeSeries([0.0, 1.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            s.values[0] = 5.0

    def test_span_and_median_dt(self):
        s = TimeSeries([0.0, 10.0, 20.0, 40.0], [0.0] * 4)
        assert s.span == 40.0
        assert s.median_dt == 10.0

    def test_unit_round_trip(self, fluid):
        s = TimeSeries([0.0, 60.0], [100.0, 258.0], Unit.CM_WATER)
        back = s.to_unit(Unit.MBAR, fluid).to_unit(Unit.CM_WATER, fluid)
        assert back.values == pytest.approx(s.values)
        assert back.unit is Unit.CM_WATER

    def test_window_is_inclusive(self):
        s = TimeSeries(np.arange(10.0), np.arange(10.0))
        w = s.window(2.0, 5.0)
        assert list(w.timestamps) == [2.0, 3.0, 4.0, 5.0]

    def test_shift_and_scale(self):
        s = TimeSeries([0.0, 1.0], [1.0, 2.0])
        assert list(s.shifted(5.0).timestamps) == [5.0, 6.0]
        assert list(s.scaled(2.0).values) == [2.0, 4.0]

    def test_interp_is_clamped(self):
        s = TimeSeries([0.0, 10.0], [0.0, 1.0])
        assert s.interp(5.0) == pytest.approx(0.5)
        assert s.interp(20.0) == pytest.approx(1.0)

    def test_to_frame_columns(self):
        frame = TimeSeries([0.0], [1.0], Unit.MBAR).to_frame()
        assert list(frame.columns) == ["time", "value", "unit"]
        assert frame["unit"].iloc[0] == "mbar"
