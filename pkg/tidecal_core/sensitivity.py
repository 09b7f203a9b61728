"""
sensitivity.py — diffusivity sweeps of amplitude and delay.

Two views of the same question, how strongly the tidal response depends on d:
  * profiles along a horizontal slice for a list of diffusivities
    (2D numerical, or the 1D finite-aquifer solution)
  * amplitude and delay versus d at one probe point
Frames are long-form (one row per d and position) so they plot and diff easily.
"""

import math

import numpy as np
import pandas as pd

from tidal_cheat_sheet import TIDAL_SHEET
from tidecal_core.analytic import HarmonicBoundary, finite_aquifer_profile
from tidecal_core.dike_model import DikeModel, Sensor, points_in_polygon
from tidecal_core.errors import InvalidParameter
from tidecal_core.flow_solver import steady_harmonic_features
from tidecal_core.mesh import build_mesh
from tidecal_core.units import TimeSeries
from tidecal_core.utils import debug

PERIOD = TIDAL_SHEET["tide"]["period_s"]
SOLVER = TIDAL_SHEET["solver"]


def _check_diffusivities(diffusivities):
    ds = [float(d) for d in diffusivities]
    if not ds or min(ds) <= 0:
        raise InvalidParameter(f"diffusivities must be a non-empty list of positive values (got {diffusivities})")
    return ds


def analytic_profile_sweep(diffusivities, distances, length, period=PERIOD):
    """1D finite-aquifer profiles; `distances` are measured from the sea end."""
    ds = _check_diffusivities(diffusivities)
    s = np.asarray(distances, dtype=float)
    bc = HarmonicBoundary.from_period(1.0, period)
    frames = []
    for d in ds:
        prof = finite_aquifer_profile(length - s, d, length, bc)
        frames.append(pd.DataFrame({"d": d, "x": s, "amplitude": prof["amplitude_ratio"].to_numpy(),
                                    "delay_min": prof["delay_min"].to_numpy()}))
    return pd.concat(frames, ignore_index=True)


def slice_probes(model: DikeModel, y, xs):
    """Probe sensors S<x> on the horizontal line y, keeping those inside the section."""
    xs = np.asarray(xs, dtype=float)
    inside = points_in_polygon([(x, y) for x in xs], model.polygon, tol=1e-6)
    return tuple(Sensor(f"S{x:g}", float(x), float(y)) for x, ok in zip(xs, inside) if ok)


def numerical_profile_sweep(model: DikeModel, diffusivities, y, xs, tide: TimeSeries, land=None,
                            mode="saturated", dt=SOLVER["default_dt_s"], spinup_periods=SOLVER["spinup_periods"],
                            period=PERIOD, context=None):
    """2D amplitude/delay along the line y for each homogeneous diffusivity."""
    ds = _check_diffusivities(diffusivities)
    probes = slice_probes(model, y, xs)
    if not probes:
        raise InvalidParameter(f"no probe position on y={y} lies inside the section")
    base = model.with_sensors(probes)
    mesh = build_mesh(base, context=context)
    rows = []
    for d in ds:
        feats = steady_harmonic_features(base.with_diffusivity(d), tide, land, mode=mode, dt=dt,
                                         spinup_periods=spinup_periods, period=period, mesh=mesh,
                                         context=context)
        rows.extend({"d": d, "x": s.x, "amplitude": feats[s.id].relative_amplitude,
                     "delay_min": feats[s.id].delay_minutes} for s in probes)
        debug(context, f"[SENS] d={d:g} m²/s: {len(probes)} probe(s) on y={y}")
    return pd.DataFrame(rows)


def probe_sweep(model: DikeModel, diffusivities, x, y, tide: TimeSeries, land=None, mode="saturated",
                dt=SOLVER["default_dt_s"], spinup_periods=SOLVER["spinup_periods"], period=PERIOD,
                context=None):
    """Amplitude and delay versus d at a single point."""
    ds = _check_diffusivities(diffusivities)
    frame = numerical_profile_sweep(model, ds, y, [x], tide, land, mode, dt, spinup_periods, period, context)
    return frame.drop(columns="x")


def amplitude_spread(frame: pd.DataFrame):
    """Largest relative deviation of any profile from the per-position mean amplitude."""
    table = frame.pivot_table(index="x", columns="d", values="amplitude")
    mean = table.mean(axis=1)
    return float(((table.sub(mean, axis=0)).abs().div(mean, axis=0)).max().max())


def is_strictly_decreasing(values):
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) < 0))


def plot_sweep(frame: pd.DataFrame, path, title=None):
    """Two-panel PNG (amplitude and delay against position, one line per d)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax_a, ax_d) = plt.subplots(2, 1, sharex=True, figsize=(7, 6))
    for d, grp in frame.groupby("d"):
        label = f"d = {d:g} m²/s"
        ax_a.plot(grp["x"], grp["amplitude"], marker="o", ms=3, label=label)
        ax_d.plot(grp["x"], grp["delay_min"], marker="o", ms=3, label=label)
    ax_a.set_ylabel("relative amplitude [-]")
    ax_d.set_ylabel("delay [min]")
    ax_d.set_xlabel("x [m]")
    ax_a.legend(fontsize=8)
    if title:
        ax_a.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def log_spaced(lo, hi, n):
    if not (0 < lo < hi and n >= 2):
        raise InvalidParameter(f"need 0 < lo < hi and n >= 2 (got {lo}, {hi}, {n})")
    return [float(v) for v in np.exp(np.linspace(math.log(lo), math.log(hi), n))]
