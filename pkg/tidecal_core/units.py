"""
units.py — core domain types: physical units, sampled series and fluid properties.
All internal computation is SI (Pa, m, s); units exist only at the I/O boundary.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from tidal_cheat_sheet import TIDAL_SHEET
from tidecal_core.errors import BadUnit, InvalidParameter, NonMonotonicTime


class Unit(str, enum.Enum):
    CM_WATER = "cm"
    MBAR = "mbar"
    PA = "Pa"
    DIMENSIONLESS = "dimensionless"

    @classmethod
    def parse(cls, text):
        aliases = {"cm": cls.CM_WATER, "cm-water": cls.CM_WATER, "mbar": cls.MBAR,
                   "pa": cls.PA, "dimensionless": cls.DIMENSIONLESS, "-": cls.DIMENSIONLESS}
        try:
            return aliases[str(text).strip().lower()]
        except KeyError:
            raise BadUnit(f"unknown unit '{text}'") from None


# ============================================================
# FLUID
# ============================================================
@dataclass(frozen=True)
class FluidProperties:
    """Water density, gravity and a step-function viscosity rule.

    viscosity_rule rows are (lower temperature bound °C, μ Pa·s), sorted by
    bound descending; the first row with bound <= T applies.
    """

    rho: float = TIDAL_SHEET["fluid"]["rho"]
    g: float = TIDAL_SHEET["fluid"]["g"]
    viscosity_rule: tuple = tuple(TIDAL_SHEET["viscosity_table"])
    temperature_c: float = TIDAL_SHEET["fluid"]["temperature_c"]

    def __post_init__(self):
        if not (self.rho > 0 and self.g > 0):
            raise InvalidParameter(f"rho and g must be positive (rho={self.rho}, g={self.g})")
        rows = tuple(sorted(((float(b), float(mu)) for b, mu in self.viscosity_rule),
                            key=lambda r: r[0], reverse=True))
        if not rows:
            raise InvalidParameter("viscosity rule has no rows")
        if rows[-1][0] != float("-inf"):
            # total function: the coldest row extends to -inf
            rows = rows[:-1] + ((float("-inf"), rows[-1][1]),)
        mus = [mu for _, mu in rows]
        if any(mu <= 0 for mu in mus):
            raise InvalidParameter("viscosity must be positive")
        if any(warm > cold for warm, cold in zip(mus, mus[1:])):
            raise InvalidParameter("viscosity must be non-increasing in temperature")
        object.__setattr__(self, "viscosity_rule", rows)

    @property
    def rho_g(self):
        return self.rho * self.g

    @property
    def viscosity(self):
        """Viscosity at the fluid's own temperature."""
        return viscosity_of_temperature(self.temperature_c, self)

    @classmethod
    def constant(cls, mu, **kwargs):
        return cls(viscosity_rule=((float("-inf"), float(mu)),), **kwargs)

    def at_temperature(self, temperature_c):
        return FluidProperties(self.rho, self.g, self.viscosity_rule, float(temperature_c))


def viscosity_of_temperature(T, fluid: FluidProperties):
    """Step-function viscosity [Pa·s] for water temperature T [°C]."""
    for bound, mu in fluid.viscosity_rule:
        if T >= bound:
            return mu
    return fluid.viscosity_rule[-1][1]


def viscosity_series(temperature: "TimeSeries", fluid: FluidProperties):
    """Viscosity per sample of a water-temperature series."""
    mu = np.array([viscosity_of_temperature(T, fluid) for T in temperature.values])
    return TimeSeries(temperature.timestamps, mu, Unit.DIMENSIONLESS)


def viscosity_seasonal_ratio(fluid: FluidProperties):
    """μ(January bucket) / μ(July bucket)."""
    season = TIDAL_SHEET["season_temperature_c"]
    return (viscosity_of_temperature(season["january"], fluid)
            / viscosity_of_temperature(season["july"], fluid))


def convert_level_to_pressure(level_cm, fluid: FluidProperties):
    """Water level [cm] to pressure [mbar]: ρ·g·(level/100) / 100."""
    return fluid.rho_g * (level_cm / 100.0) / 100.0


# --- Unit conversion --------------------------------------------------------
def _to_pa_factor(unit, fluid):
    if unit == Unit.PA:
        return 1.0
    if unit == Unit.MBAR:
        return 100.0
    if unit == Unit.CM_WATER:
        return fluid.rho_g / 100.0
    raise BadUnit(f"unit {unit.value} has no pressure equivalent")


def convert(value, src: Unit, dst: Unit, fluid: FluidProperties = None):
    """Convert scalar or array between pressure/level units."""
    src, dst = Unit(src), Unit(dst)
    if src == dst:
        return value
    fluid = fluid or FluidProperties()
    return value * (_to_pa_factor(src, fluid) / _to_pa_factor(dst, fluid))


# ============================================================
# TIME SERIES
# ============================================================
@dataclass(frozen=True)
class TimeSeries:
    """Scalar signal with epoch-second timestamps and a declared unit."""

    timestamps: np.ndarray
    values: np.ndarray
    unit: Unit = Unit.PA
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        t = np.array(self.timestamps, dtype=float)
        v = np.array(self.values, dtype=float)
        if t.ndim != 1 or v.ndim != 1 or len(t) != len(v):
            raise InvalidParameter(f"timestamps/values length mismatch ({t.shape} vs {v.shape})")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise NonMonotonicTime("timestamps must be strictly increasing")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "unit", Unit(self.unit))

    def __len__(self):
        return len(self.timestamps)

    @property
    def t_start(self):
        return float(self.timestamps[0])

    @property
    def t_end(self):
        return float(self.timestamps[-1])

    @property
    def span(self):
        return self.t_end - self.t_start if len(self) else 0.0

    @property
    def median_dt(self):
        return float(np.median(np.diff(self.timestamps))) if len(self) > 1 else 0.0

    def with_values(self, values, unit=None):
        return TimeSeries(self.timestamps, values, unit or self.unit, dict(self.meta))

    def to_unit(self, unit, fluid: FluidProperties = None):
        return TimeSeries(self.timestamps, convert(self.values, self.unit, unit, fluid),
                          Unit(unit), dict(self.meta))

    def window(self, t0, t1):
        mask = (self.timestamps >= t0) & (self.timestamps <= t1)
        return TimeSeries(self.timestamps[mask], self.values[mask], self.unit, dict(self.meta))

    def shifted(self, tau):
        return TimeSeries(self.timestamps + tau, self.values, self.unit, dict(self.meta))

    def scaled(self, k):
        return self.with_values(self.values * k)

    def interp(self, t):
        """Linear interpolation (clamped at the ends)."""
        return np.interp(t, self.timestamps, self.values)

    def to_frame(self):
        return pd.DataFrame({
            "time": pd.to_datetime(self.timestamps, unit="s", utc=True),
            "value": self.values,
            "unit": self.unit.value,
        })
