"""
sensor_signal.py — sensor CSV I/O, adaptive smoothing, extrema detection and
harmonic feature extraction (relative amplitude and lag against the tide).

Sensor CSV format: header `time,value,unit`, ISO-8601 UTC times, unit in
{cm, mbar, Pa}, comma separated, LF line endings.
"""

from __future__ import annotations

import datetime
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.signal import find_peaks
from scipy.stats import circmean, median_abs_deviation

from tidal_cheat_sheet import TIDAL_SHEET
from tidecal_core.errors import (
    BadHeader, BadUnit, InvalidParameter, NonMonotonicTime, NoOverlap, TooShort, UnparsableRow,
)
from tidecal_core.units import FluidProperties, TimeSeries, Unit
from tidecal_core.utils import atomic_write_text, debug

CSV_HEADER = "time,value,unit"
CSV_UNITS = {"cm": Unit.CM_WATER, "mbar": Unit.MBAR, "Pa": Unit.PA}
SMOOTH = TIDAL_SHEET["smoothing"]
PERIOD = TIDAL_SHEET["tide"]["period_s"]


def wrap_delay(dt, period):
    """Wrap a lag into [0, period)."""
    w = float(np.mod(dt, period))
    return 0.0 if w >= period else w


@dataclass(frozen=True)
class HarmonicFeature:
    relative_amplitude: float
    delay_s: float
    window: tuple = None
    per_cycle: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.relative_amplitude < 0 or not math.isfinite(self.relative_amplitude):
            raise InvalidParameter(f"relative amplitude must be finite and >= 0 "
                                   f"(got {self.relative_amplitude})")
        if self.delay_s < 0:
            raise InvalidParameter(f"delay must be wrapped to [0, T) (got {self.delay_s})")

    @property
    def delay_minutes(self):
        return self.delay_s / 60.0

    def to_dict(self):
        return {
            "relative_amplitude": self.relative_amplitude,
            "delay_minutes": self.delay_minutes,
            "window": list(self.window) if self.window else None,
            "per_cycle": list(self.per_cycle),
        }


# ============================================================
# CSV I/O
# ============================================================
def iso_utc(t):
    ts = datetime.datetime.fromtimestamp(float(t), tz=datetime.timezone.utc)
    if float(t).is_integer():
        return ts.strftime("%Y-%m-%dT%H:%M:%SZ")
    return ts.strftime("%Y-%m-%dT%H:%M:%S.%f")[:-3] + "Z"


def parse_iso_times(texts):
    """ISO-8601 strings to epoch seconds (naive times read as UTC); NaN where unparsable."""
    stamps = pd.to_datetime(pd.Series(list(texts), dtype=object), utc=True, errors="coerce",
                            format="ISO8601")
    secs = (stamps - pd.Timestamp(0, tz="UTC")).dt.total_seconds()
    return secs.to_numpy(dtype=float)


def parse_sensor_csv(data) -> TimeSeries:
    """Parse sensor CSV bytes (or text) into a TimeSeries in the file's unit."""
    if isinstance(data, (bytes, bytearray)):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as e:
            lineno = data.count(b"\n", 0, e.start) + 1
            if lineno == 1:
                raise BadHeader("header is not valid UTF-8") from e
            raise UnparsableRow(lineno, "not valid UTF-8") from e
    else:
        text = str(data)
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines = lines[:-1]
    if not lines or lines[0] != CSV_HEADER:
        raise BadHeader(f"expected header '{CSV_HEADER}', got '{lines[0] if lines else ''}'")

    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3 or "\r" in line:
            raise UnparsableRow(lineno, "expected 3 comma-separated fields")
        rows.append((lineno, parts[0], parts[1], parts[2]))
    if not rows:
        raise TooShort("sensor file has no samples")

    df = pd.DataFrame(rows, columns=["line", "time", "value", "unit"])
    bad_units = sorted(set(df["unit"]) - set(CSV_UNITS))
    if bad_units:
        raise BadUnit(f"unit(s) {bad_units} not in {sorted(CSV_UNITS)}")
    if df["unit"].nunique() > 1:
        raise BadUnit(f"mixed units in one file: {sorted(set(df['unit']))}")

    t = parse_iso_times(df["time"])
    v = pd.to_numeric(df["value"], errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(t) | ~np.isfinite(v))
    if bad.size:
        i = int(bad[0])
        raise UnparsableRow(int(df["line"].iloc[i]), f"'{lines[i + 1]}'")
    if np.any(np.diff(t) <= 0):
        i = int(np.flatnonzero(np.diff(t) <= 0)[0]) + 1
        raise NonMonotonicTime(f"timestamp at line {int(df['line'].iloc[i])} does not increase")
    return TimeSeries(t, v, CSV_UNITS[df["unit"].iloc[0]])


def read_sensor_csv(path) -> TimeSeries:
    with open(path, "rb") as f:
        return parse_sensor_csv(f.read())


def format_sensor_csv(series: TimeSeries) -> str:
    if series.unit not in CSV_UNITS.values():
        raise BadUnit(f"unit {series.unit.value} cannot be written to a sensor file")
    unit = series.unit.value
    out = [CSV_HEADER]
    out.extend(f"{iso_utc(t)},{float(v)!r},{unit}" for t, v in zip(series.timestamps, series.values))
    return "\n".join(out) + "\n"


def write_sensor_csv(path, series: TimeSeries):
    atomic_write_text(path, format_sensor_csv(series))


# ============================================================
# RESAMPLING / GAPS
# ============================================================
def resample_linear(series: TimeSeries, dt) -> TimeSeries:
    """Uniform resampling from t_start by linear interpolation."""
    if not dt > 0:
        raise InvalidParameter(f"dt must be > 0 (got {dt})")
    if len(series) < 2:
        raise TooShort("need at least 2 samples to resample")
    n = int(math.floor(series.span / dt + 1e-9)) + 1
    t = series.t_start + dt * np.arange(n)
    return TimeSeries(t, series.interp(t), series.unit, dict(series.meta))


def find_gaps(series: TimeSeries, max_gap):
    """Intervals (t0, t1) between consecutive samples further apart than max_gap."""
    t = series.timestamps
    idx = np.flatnonzero(np.diff(t) > max_gap)
    return [(float(t[i]), float(t[i + 1])) for i in idx]


# ============================================================
# SMOOTHING
# ============================================================
def noise_estimate(values):
    """Robust noise scale: MAD of first differences (normal-scaled) / √2."""
    diffs = np.diff(np.asarray(values, dtype=float))
    if diffs.size == 0:
        return 0.0
    return float(median_abs_deviation(diffs, scale="normal")) / math.sqrt(2.0)


def _local_line(t, v, lo, hi, t0):
    tc = t[lo:hi] - t0
    coef = np.polyfit(tc, v[lo:hi], 1)
    resid = v[lo:hi] - np.polyval(coef, tc)
    return coef[1], float(np.std(resid, ddof=2)) if hi - lo > 2 else 0.0


def smooth_adaptive(series: TimeSeries, noise_scale=None, period=PERIOD) -> TimeSeries:
    """Centred local linear regression with an adaptive window.

    Windows start at `min_window` samples and grow symmetrically while the
    fit's residual std stays below noise_factor × noise scale, up to a span
    of period·max_span_fraction. Near the ends the window is shifted inward.
    """
    n = len(series)
    w0 = SMOOTH["min_window"]
    if n < w0:
        raise TooShort(f"smoothing needs >= {w0} samples (got {n})")
    t, v = series.timestamps, series.values
    sigma = noise_estimate(v) if noise_scale is None else float(noise_scale)
    limit = SMOOTH["noise_factor"] * sigma
    max_span = period * SMOOTH["max_span_fraction"]
    h0 = w0 // 2

    out = np.empty(n)
    for i in range(n):
        h = h0
        lo, hi = _window(i, h, n)
        pred, _ = _local_line(t, v, lo, hi, t[i])
        while True:
            lo2, hi2 = _window(i, h + 1, n)
            if (lo2, hi2) == (lo, hi) or t[hi2 - 1] - t[lo2] > max_span:
                break
            p2, sd = _local_line(t, v, lo2, hi2, t[i])
            if not sd < limit:
                break
            h, lo, hi, pred = h + 1, lo2, hi2, p2
        out[i] = pred
    return series.with_values(out)


def _window(i, h, n):
    size = min(2 * h + 1, n)
    lo = min(max(i - h, 0), n - size)
    return lo, lo + size


# ============================================================
# EXTREMA
# ============================================================
def _vertex(t, v, i):
    """Sub-sample extremum by a parabola through samples i-1, i, i+1."""
    if i <= 0 or i >= len(v) - 1:
        return float(t[i]), float(v[i])
    tc = t[i - 1:i + 2] - t[i]
    a, b, c = np.polyfit(tc, v[i - 1:i + 2], 2)
    if a == 0:
        return float(t[i]), float(v[i])
    tv = float(np.clip(-b / (2 * a), tc[0], tc[-1]))
    return float(t[i] + tv), float(np.polyval((a, b, c), tv))


def extract_extrema(series: TimeSeries, period=PERIOD):
    """One (t_max, v_max, t_min, v_min) tuple per cycle: each maximum paired
    with the first minimum that follows it."""
    if len(series) < 3 or series.span < period * (1 - 1e-9):
        raise TooShort(f"series spans {series.span:.0f} s, need one period ({period:.0f} s)")
    t, v = series.timestamps, series.values
    rng = float(np.ptp(v))
    if rng == 0:
        return []
    distance = max(1, int(0.5 * period / series.median_dt))
    prominence = 0.05 * rng
    maxima, _ = find_peaks(v, distance=distance, prominence=prominence)
    minima, _ = find_peaks(-v, distance=distance, prominence=prominence)

    cycles = []
    for k, i in enumerate(maxima):
        nxt = maxima[k + 1] if k + 1 < len(maxima) else len(v)
        following = minima[(minima > i) & (minima < nxt)]
        if following.size == 0:
            continue
        tm, vm = _vertex(t, v, i)
        tn, vn = _vertex(t, v, int(following[0]))
        cycles.append((tm, vm, tn, vn))
    return cycles


# ============================================================
# FEATURES
# ============================================================
def _as_pascal(series, fluid):
    return series.to_unit(Unit.PA, fluid)


def extract_features(pressure: TimeSeries, tide: TimeSeries, fluid: FluidProperties = None,
                     period=PERIOD, air: TimeSeries = None, smooth=False, context=None) -> HarmonicFeature:
    """Relative amplitude (p range over ρg·h range) and lag of the pressure
    maximum behind the tide maximum, averaged over complete cycles."""
    fluid = fluid or FluidProperties()
    p = _as_pascal(pressure, fluid)
    h = _as_pascal(tide, fluid)
    if air is not None:
        a = _as_pascal(air, fluid)
        p = p.with_values(p.values - a.interp(p.timestamps))

    t0, t1 = max(p.t_start, h.t_start), min(p.t_end, h.t_end)
    if t1 <= t0:
        raise NoOverlap(f"pressure [{p.t_start:.0f}, {p.t_end:.0f}] and tide "
                        f"[{h.t_start:.0f}, {h.t_end:.0f}] do not overlap")
    p, h = p.window(t0, t1), h.window(t0, t1)
    if smooth:
        p = smooth_adaptive(p, period=period)
        h = smooth_adaptive(h, period=period)

    tide_cycles = extract_extrema(h, period)
    p_cycles = extract_extrema(p, period)
    if not tide_cycles or not p_cycles:
        raise TooShort("no complete tidal cycle in the overlap window")

    p_tmax = np.array([c[0] for c in p_cycles])
    per_cycle, ratios, delays = [], [], []
    for th, hmax, _, hmin in tide_cycles:
        k = int(np.argmin(np.abs(p_tmax - th)))
        tp, pmax, _, pmin = p_cycles[k]
        h_range = hmax - hmin
        if h_range <= 0:
            continue
        ratio = (pmax - pmin) / h_range
        delay = wrap_delay(tp - th, period)
        ratios.append(ratio)
        delays.append(delay)
        per_cycle.append({"t_tide_max": th, "relative_amplitude": ratio, "delay_minutes": delay / 60.0})
    if not ratios:
        raise TooShort("no usable tidal cycle in the overlap window")

    mean_delay = wrap_delay(float(circmean(delays, high=period, low=0.0)), period)
    feature = HarmonicFeature(float(np.mean(ratios)), mean_delay, (t0, t1), tuple(per_cycle))
    debug(context, f"[SIGNAL] {len(ratios)} cycle(s): amplitude {feature.relative_amplitude:.4f}, "
                   f"delay {feature.delay_minutes:.1f} min", level="DEBUG")
    return feature
